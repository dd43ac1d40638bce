//! Forward solvers for the coupled state system
//!
//! ```text
//! df1 = [div(d1 grad f1) - div(F1 f1) + R1 + R] dt + f1 sum_i h_{i,1} dB_i
//! df2 = [div(d2 grad f2) - div(F2 f2) + R2 - R] dt + f2 sum_i h_{i,2} dB_i
//! ```
//!
//! with Dirichlet boundary data and shared Brownian motions `B_i` across the
//! two equations. Time stepping is IMEX: diffusion implicit, advection and
//! reaction explicit at the left endpoint, noise applied at the left
//! endpoint (Ito convention).
//!
//! Two backends produce trajectories for the same path:
//!
//! * [`solve_forward_em`] applies the noise increment directly per step.
//! * [`solve_forward_transformed`] substitutes `f_j = exp(E_j) C_j` with
//!   `E_j(x, t) = sum_i h_{i,j}(x) B_i(t)`, which removes the stochastic
//!   integral and leaves a parabolic equation for `C_j` with a corrected
//!   drift `F - 2 d grad E` and a zero-order potential; coefficients are
//!   frozen per step at the sampled path values. The mode shapes vanish on
//!   the boundary, so the Dirichlet data transfers to `C_j` unchanged.
//!
//! With the noise amplitude at zero the two backends perform identical
//! arithmetic and agree to rounding; with noise on they converge to the
//! same pathwise solution as `dt` shrinks, which is the cross-check the
//! equivalence command exercises.

use crate::error::{Error, Result};
use crate::grid::{
    advection_divergence, central_gradient, laplacian_dirichlet, solve_implicit_diffusion,
    ScalarField, SpaceTimeGrid,
};
use crate::model::{reaction_terms, ModelParams};
use crate::noise::BrownianPaths;
use crate::optimizer::ControlSet;

/// State trajectory: `nt + 1` frames per population, plus the path seed.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub f1: Vec<ScalarField>,
    pub f2: Vec<ScalarField>,
    pub seed: u64,
}

fn check_setup(params: &ModelParams, controls: &ControlSet, paths: &BrownianPaths, grid: &SpaceTimeGrid) {
    assert_eq!(paths.nt, grid.nt, "Brownian paths sampled for a different nt");
    assert_eq!(
        paths.n_modes,
        params.modes.n_modes(),
        "path count does not match the number of noise modes"
    );
    assert_eq!(controls.beta1.len(), grid.nt + 1, "controls need nt + 1 frames");
    assert_eq!(params.fb_1.len(), grid.nt + 1, "boundary data needs nt + 1 frames");
}

/// Sum of `h_{i,j} * w_i` over modes, for per-step noise and exponent fields.
pub(crate) fn mode_combination(
    modes: &[ScalarField],
    weights: impl Fn(usize) -> f64,
    grid: &SpaceTimeGrid,
) -> ScalarField {
    let mut out = ScalarField::zeros(grid);
    for (m, h) in modes.iter().enumerate() {
        let w = weights(m);
        out.values.zip_mut_with(&h.values, |o, v| *o += w * v);
    }
    out
}

pub(crate) fn ensure_finite(field: &ScalarField, what: &'static str, step: usize) -> Result<()> {
    if field.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, step })
    }
}

fn floor_interior(field: &mut ScalarField, grid: &SpaceTimeGrid) {
    for i in 1..grid.nx - 1 {
        for j in 1..grid.ny - 1 {
            if field.values[[i, j]] < 0.0 {
                field.values[[i, j]] = 0.0;
            }
        }
    }
}

/// Direct Euler-Maruyama IMEX backend.
pub fn solve_forward_em(
    params: &ModelParams,
    controls: &ControlSet,
    paths: &BrownianPaths,
    grid: &SpaceTimeGrid,
) -> Result<StateTrajectory> {
    check_setup(params, controls, paths, grid);
    let dt = grid.dt();
    let mut f1 = params.f0_1.clone();
    let mut f2 = params.f0_2.clone();
    let mut out = StateTrajectory {
        f1: Vec::with_capacity(grid.nt + 1),
        f2: Vec::with_capacity(grid.nt + 1),
        seed: paths.seed,
    };
    out.f1.push(f1.clone());
    out.f2.push(f2.clone());

    for k in 0..grid.nt {
        let (r1, r2, r) = reaction_terms(
            &f1,
            &f2,
            &controls.beta1[k],
            &controls.beta2[k],
            &controls.s1[k],
            &controls.s2[k],
            params,
        );
        let adv1 = advection_divergence(&f1, &params.vel1.0, &params.vel1.1, grid);
        let adv2 = advection_divergence(&f2, &params.vel2.0, &params.vel2.1, grid);
        let n1 = mode_combination(&params.modes.h1, |m| paths.increments[[m, k]], grid);
        let n2 = mode_combination(&params.modes.h2, |m| paths.increments[[m, k]], grid);

        let mut u1 = ScalarField::zeros(grid);
        let mut u2 = ScalarField::zeros(grid);
        for i in 1..grid.nx - 1 {
            for j in 1..grid.ny - 1 {
                let e1 = -adv1.values[[i, j]] + (r1.values[[i, j]] + r.values[[i, j]]);
                let e2 = -adv2.values[[i, j]] + (r2.values[[i, j]] - r.values[[i, j]]);
                u1.values[[i, j]] =
                    f1.values[[i, j]] + dt * e1 + f1.values[[i, j]] * n1.values[[i, j]];
                u2.values[[i, j]] =
                    f2.values[[i, j]] + dt * e2 + f2.values[[i, j]] * n2.values[[i, j]];
            }
        }

        f1 = solve_implicit_diffusion(&u1, &params.fb_1[k + 1], params.d1, dt, grid, k, "forward f1")?;
        f2 = solve_implicit_diffusion(&u2, &params.fb_2[k + 1], params.d2, dt, grid, k, "forward f2")?;
        if params.floor_at_zero {
            floor_interior(&mut f1, grid);
            floor_interior(&mut f2, grid);
        }
        ensure_finite(&f1, "state f1", k + 1)?;
        ensure_finite(&f2, "state f2", k + 1)?;
        out.f1.push(f1.clone());
        out.f2.push(f2.clone());
    }
    Ok(out)
}

/// Per-equation data reused across transformed steps.
pub(crate) struct TransformCoeffs {
    grad_h: Vec<(ScalarField, ScalarField)>,
    lap_h: Vec<ScalarField>,
    /// `sum_i h_i^2`
    pub(crate) h_sq: ScalarField,
}

impl TransformCoeffs {
    pub(crate) fn build(modes: &[ScalarField], grid: &SpaceTimeGrid) -> Self {
        let grad_h = modes.iter().map(|h| central_gradient(h, grid)).collect();
        let lap_h = modes.iter().map(|h| laplacian_dirichlet(h, 1.0, grid)).collect();
        let mut h_sq = ScalarField::zeros(grid);
        for h in modes {
            h_sq.values.zip_mut_with(&h.values, |o, v| *o += v * v);
        }
        Self { grad_h, lap_h, h_sq }
    }

    /// Exponent field `E = sum_i h_i B_i(t_k)` and its first two derivative
    /// combinations, all assembled from precomputed mode derivatives.
    pub(crate) fn exponent(
        &self,
        modes: &[ScalarField],
        paths: &BrownianPaths,
        k: usize,
        grid: &SpaceTimeGrid,
    ) -> (ScalarField, ScalarField, ScalarField, ScalarField) {
        let b = |m: usize| paths.cumulative[[m, k]];
        let e = mode_combination(modes, b, grid);
        let gx = mode_combination(
            &self.grad_h.iter().map(|g| g.0.clone()).collect::<Vec<_>>(),
            b,
            grid,
        );
        let gy = mode_combination(
            &self.grad_h.iter().map(|g| g.1.clone()).collect::<Vec<_>>(),
            b,
            grid,
        );
        let lap = mode_combination(&self.lap_h, b, grid);
        (e, gx, gy, lap)
    }
}

/// Exponential-substitution backend: marches the transformed variable
/// `C_j = exp(-E_j) f_j` with deterministic per-step coefficients.
pub fn solve_forward_transformed(
    params: &ModelParams,
    controls: &ControlSet,
    paths: &BrownianPaths,
    grid: &SpaceTimeGrid,
) -> Result<StateTrajectory> {
    check_setup(params, controls, paths, grid);
    let dt = grid.dt();
    let coeffs1 = TransformCoeffs::build(&params.modes.h1, grid);
    let coeffs2 = TransformCoeffs::build(&params.modes.h2, grid);

    // B(0) = 0, so C = f at t = 0.
    let mut c1 = params.f0_1.clone();
    let mut c2 = params.f0_2.clone();
    let mut f1 = params.f0_1.clone();
    let mut f2 = params.f0_2.clone();
    let mut out = StateTrajectory {
        f1: Vec::with_capacity(grid.nt + 1),
        f2: Vec::with_capacity(grid.nt + 1),
        seed: paths.seed,
    };
    out.f1.push(f1.clone());
    out.f2.push(f2.clone());

    for k in 0..grid.nt {
        let (r1, r2, r) = reaction_terms(
            &f1,
            &f2,
            &controls.beta1[k],
            &controls.beta2[k],
            &controls.s1[k],
            &controls.s2[k],
            params,
        );

        let mut u = [ScalarField::zeros(grid), ScalarField::zeros(grid)];
        for (eq, (c, coeffs, modes, vel, d)) in [
            (&c1, &coeffs1, &params.modes.h1, &params.vel1, params.d1),
            (&c2, &coeffs2, &params.modes.h2, &params.vel2, params.d2),
        ]
        .into_iter()
        .enumerate()
        {
            let (e_k, egx, egy, elap) = coeffs.exponent(modes, paths, k, grid);
            let adv = advection_divergence(c, &vel.0, &vel.1, grid);
            let (cgx, cgy) = central_gradient(c, grid);
            for i in 1..grid.nx - 1 {
                for j in 1..grid.ny - 1 {
                    let react = if eq == 0 {
                        r1.values[[i, j]] + r.values[[i, j]]
                    } else {
                        r2.values[[i, j]] - r.values[[i, j]]
                    };
                    let grad_sq = egx.values[[i, j]] * egx.values[[i, j]]
                        + egy.values[[i, j]] * egy.values[[i, j]];
                    // potential: F . grad E + h^2/2 - d (lap E + |grad E|^2)
                    let psi = vel.0.values[[i, j]] * egx.values[[i, j]]
                        + vel.1.values[[i, j]] * egy.values[[i, j]]
                        + 0.5 * coeffs.h_sq.values[[i, j]]
                        - d * (elap.values[[i, j]] + grad_sq);
                    let grad_corr = 2.0
                        * d
                        * (egx.values[[i, j]] * cgx.values[[i, j]]
                            + egy.values[[i, j]] * cgy.values[[i, j]]);
                    let source = (-e_k.values[[i, j]]).exp() * react;
                    let expl = -adv.values[[i, j]] + grad_corr - psi * c.values[[i, j]] + source;
                    u[eq].values[[i, j]] = c.values[[i, j]] + dt * expl;
                }
            }
        }

        c1 = solve_implicit_diffusion(&u[0], &params.fb_1[k + 1], params.d1, dt, grid, k, "transformed f1")?;
        c2 = solve_implicit_diffusion(&u[1], &params.fb_2[k + 1], params.d2, dt, grid, k, "transformed f2")?;

        // Recover physical densities at t_{k+1}; E vanishes on the boundary,
        // so overwriting with the Dirichlet data is consistent.
        let e1_next = mode_combination(&params.modes.h1, |m| paths.cumulative[[m, k + 1]], grid);
        let e2_next = mode_combination(&params.modes.h2, |m| paths.cumulative[[m, k + 1]], grid);
        f1 = params.fb_1[k + 1].clone();
        f2 = params.fb_2[k + 1].clone();
        for i in 1..grid.nx - 1 {
            for j in 1..grid.ny - 1 {
                f1.values[[i, j]] = e1_next.values[[i, j]].exp() * c1.values[[i, j]];
                f2.values[[i, j]] = e2_next.values[[i, j]].exp() * c2.values[[i, j]];
            }
        }
        if params.floor_at_zero {
            floor_interior(&mut f1, grid);
            floor_interior(&mut f2, grid);
            for i in 1..grid.nx - 1 {
                for j in 1..grid.ny - 1 {
                    c1.values[[i, j]] = (-e1_next.values[[i, j]]).exp() * f1.values[[i, j]];
                    c2.values[[i, j]] = (-e2_next.values[[i, j]]).exp() * f2.values[[i, j]];
                }
            }
        }
        ensure_finite(&f1, "state f1", k + 1)?;
        ensure_finite(&f2, "state f2", k + 1)?;
        out.f1.push(f1.clone());
        out.f2.push(f2.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::l2_space_time_diff;
    use crate::noise::{default_modes, sample_brownian, NoiseModes};
    use crate::optimizer::ControlSet;

    fn logistic_params(grid: &SpaceTimeGrid) -> ModelParams {
        let zero = ScalarField::zeros(grid);
        let one = ScalarField::constant(grid, 1.0);
        ModelParams {
            d1: 1e-8,
            d2: 1e-8,
            vel1: (zero.clone(), zero.clone()),
            vel2: (zero.clone(), zero.clone()),
            k: 0.0,
            alpha: 1.31,
            capacity: 10.0,
            modes: NoiseModes::zero(2, grid),
            f0_1: one.clone(),
            f0_2: zero.clone(),
            fb_1: vec![one; grid.nt + 1],
            fb_2: vec![zero; grid.nt + 1],
            floor_at_zero: false,
        }
    }

    fn constant_controls(grid: &SpaceTimeGrid, beta: f64) -> ControlSet {
        ControlSet::constant(
            grid,
            [beta, beta, 0.5, 0.5],
            [(0.0, 2.0), (0.0, 2.0), (0.0, 1.0), (0.0, 1.0)],
        )
    }

    #[test]
    fn uniform_state_reduces_to_the_logistic_equation() {
        // f2 = 0, no advection, no noise, tiny diffusion: the center node
        // follows df/dt = beta f (1 - f/N). Exact value at T = 2 with
        // beta = 0.5, N = 10, f(0) = 1: 10 / (1 + 9 e^{-1}).
        let g = SpaceTimeGrid::new(9, 9, 1.0, 1.0, 500, 2.0).unwrap();
        let params = logistic_params(&g);
        let controls = constant_controls(&g, 0.5);
        let paths = sample_brownian(1, 2, &g);
        let traj = solve_forward_em(&params, &controls, &paths, &g).unwrap();
        let got = traj.f1[g.nt].values[[4, 4]];
        let want = 10.0 / (1.0 + 9.0 * (-1.0_f64).exp());
        assert!(
            ((got - want) / want).abs() < 2e-3,
            "got {got}, want {want}"
        );
        // f2 stays identically zero.
        assert_eq!(traj.f2[g.nt].max_abs(), 0.0);
    }

    #[test]
    fn empty_state_is_an_equilibrium() {
        let g = SpaceTimeGrid::new(7, 7, 1.0, 1.0, 20, 0.5).unwrap();
        let mut params = logistic_params(&g);
        let zero = ScalarField::zeros(&g);
        params.f0_1 = zero.clone();
        params.fb_1 = vec![zero.clone(); g.nt + 1];
        params.modes = default_modes(2, 0.1, &g);
        params.k = 0.1;
        let controls = constant_controls(&g, 1.0);
        let paths = sample_brownian(3, 2, &g);
        let traj = solve_forward_em(&params, &controls, &paths, &g).unwrap();
        for k in 0..=g.nt {
            assert_eq!(traj.f1[k].max_abs(), 0.0);
            assert_eq!(traj.f2[k].max_abs(), 0.0);
        }
    }

    #[test]
    fn first_frame_and_boundary_rows_are_exact() {
        let g = SpaceTimeGrid::new(9, 7, 1.0, 1.0, 10, 0.25).unwrap();
        let mut params = logistic_params(&g);
        params.modes = default_modes(2, 0.1, &g);
        params.d1 = 0.05;
        params.k = 0.1;
        let f0 = ScalarField::from_fn(&g, |x, y| 1.0 + 0.3 * (x * 2.0).sin() * (y * 3.0).cos());
        params.f0_1 = f0.clone();
        params.fb_1 = vec![f0.clone(); g.nt + 1];
        let controls = constant_controls(&g, 0.8);
        let paths = sample_brownian(11, 2, &g);
        for solve in [solve_forward_em, solve_forward_transformed] {
            let traj = solve(&params, &controls, &paths, &g).unwrap();
            assert_eq!(traj.f1[0], params.f0_1);
            assert_eq!(traj.f2[0], params.f0_2);
            for k in 0..=g.nt {
                for i in 0..g.nx {
                    for j in 0..g.ny {
                        if g.is_boundary(i, j) {
                            assert_eq!(traj.f1[k].values[[i, j]], params.fb_1[k].values[[i, j]]);
                        }
                        assert!(traj.f1[k].values[[i, j]].is_finite());
                    }
                }
            }
        }
    }

    #[test]
    fn backends_agree_when_noise_is_off() {
        let g = SpaceTimeGrid::new(11, 11, 1.0, 1.0, 50, 0.5).unwrap();
        let mut params = logistic_params(&g);
        params.d1 = 0.02;
        params.d2 = 0.03;
        params.k = 0.1;
        params.f0_2 = ScalarField::constant(&g, 0.5);
        params.fb_2 = vec![ScalarField::constant(&g, 0.5); g.nt + 1];
        // rigid rotation about the center
        params.vel1 = (
            ScalarField::from_fn(&g, |_, y| -0.3 * (y - 0.5)),
            ScalarField::from_fn(&g, |x, _| 0.3 * (x - 0.5)),
        );
        params.vel2 = params.vel1.clone();
        params.modes = NoiseModes::zero(2, &g);
        let controls = constant_controls(&g, 0.9);
        let paths = sample_brownian(17, 2, &g);
        let a = solve_forward_em(&params, &controls, &paths, &g).unwrap();
        let b = solve_forward_transformed(&params, &controls, &paths, &g).unwrap();
        let mut worst = 0.0_f64;
        for k in 0..=g.nt {
            worst = worst.max(a.f1[k].max_abs_diff(&b.f1[k]));
            worst = worst.max(a.f2[k].max_abs_diff(&b.f2[k]));
        }
        assert!(worst < 1e-12, "max backend gap {worst}");
    }

    #[test]
    fn identical_inputs_reproduce_identical_bits() {
        let g = SpaceTimeGrid::new(9, 9, 1.0, 1.0, 30, 0.3).unwrap();
        let mut params = logistic_params(&g);
        params.modes = default_modes(2, 0.1, &g);
        params.d1 = 0.02;
        let controls = constant_controls(&g, 0.7);
        let paths = sample_brownian(23, 2, &g);
        let a = solve_forward_em(&params, &controls, &paths, &g).unwrap();
        let b = solve_forward_em(&params, &controls, &paths, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn floor_flag_clips_negative_interior_values() {
        let g = SpaceTimeGrid::new(7, 7, 1.0, 1.0, 10, 0.1).unwrap();
        let mut params = logistic_params(&g);
        // Negative initial dip in the interior, zero boundary.
        let dip = ScalarField::from_fn(&g, |x, y| {
            -0.5 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
        });
        params.f0_1 = dip.clone();
        params.fb_1 = vec![ScalarField::zeros(&g); g.nt + 1];
        let controls = constant_controls(&g, 0.0);
        let paths = sample_brownian(5, 2, &g);

        let free = solve_forward_em(&params, &controls, &paths, &g).unwrap();
        assert!(free.f1[g.nt].values[[3, 3]] < 0.0);

        params.floor_at_zero = true;
        let clipped = solve_forward_em(&params, &controls, &paths, &g).unwrap();
        for k in 1..=g.nt {
            assert!(clipped.f1[k].values.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn backends_converge_to_each_other_on_a_fixed_path() {
        // Coarse smoke version of the step-halving study: the gap between
        // the two backends shrinks as dt is halved on the same path.
        let g_fine = SpaceTimeGrid::new(9, 9, 1.0, 1.0, 200, 0.5).unwrap();
        let mut params = logistic_params(&g_fine);
        params.d1 = 0.02;
        params.d2 = 0.02;
        params.k = 0.1;
        params.f0_2 = ScalarField::constant(&g_fine, 0.5);
        params.fb_2 = vec![ScalarField::constant(&g_fine, 0.5); g_fine.nt + 1];
        params.modes = default_modes(2, 0.1, &g_fine);
        let fine_paths = sample_brownian(31, 2, &g_fine);

        let mut gaps = Vec::new();
        for factor in [4, 1] {
            let nt = g_fine.nt / factor;
            let g = SpaceTimeGrid::new(9, 9, 1.0, 1.0, nt, 0.5).unwrap();
            let mut p = params.clone();
            p.fb_1 = vec![p.fb_1[0].clone(); nt + 1];
            p.fb_2 = vec![p.fb_2[0].clone(); nt + 1];
            let controls = constant_controls(&g, 0.8);
            let paths = fine_paths.coarsen(factor);
            let a = solve_forward_em(&p, &controls, &paths, &g).unwrap();
            let b = solve_forward_transformed(&p, &controls, &paths, &g).unwrap();
            let gap = l2_space_time_diff(&a.f1, &b.f1, &g) + l2_space_time_diff(&a.f2, &b.f2, &g);
            gaps.push(gap);
        }
        assert!(
            gaps[1] < gaps[0],
            "gap did not shrink: coarse {} fine {}",
            gaps[0],
            gaps[1]
        );
    }
}
