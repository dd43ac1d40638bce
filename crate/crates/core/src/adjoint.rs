//! Backward adjoint solver.
//!
//! Given one forward trajectory and its Brownian path, this module solves
//! the linear backward system
//!
//! ```text
//! dz_f1 = -div(d1 grad z_f1) dt + H1 dt - z_f1 sum_i h_{i,1} dB_i
//! dz_f2 = -div(d2 grad z_f2) dt + H2 dt - z_f2 sum_i h_{i,2} dB_i
//! ```
//!
//! with terminal data `z(T) = 0` and zero Dirichlet boundary, where the
//! sources `H1`, `H2` carry the reaction jacobian couplings, the advection
//! term `grad z . F`, the tracking residuals `lambda (f - r)`, and the Ito
//! square term `z sum_i h_i^2` (see [`adjoint_sources`]). The noise term is
//! removed by the substitution `z_j = exp(-E_j) Zhat_j` with
//! `E_j = sum_i h_{i,j} B_i(t)`, the mirror image of the forward
//! substitution, leaving a parabolic equation for `Zhat_j` integrated
//! backward with the same IMEX splitting and linear solver as the forward
//! scheme.
//!
//! The discretization is arranged as the transpose of the forward step so
//! the control gradient assembled from the stored `G*` sources matches a
//! finite difference of the cost to solver tolerance: per backward step the
//! diffusion solve acts first, the reaction jacobians are evaluated at the
//! step's left state and control frames and applied to the diffused
//! mid-step value, and the tracking source is split half before and half
//! after the step (trapezoid weights, with `z(T) = 0` preserved exactly).
//! The mid-step value also feeds `G*_1..G*_4`, and
//! `z_g[k] = z_g[k+1] - dt G*[k]` accumulates their backward integrals.

use crate::error::Result;
use crate::forward::{ensure_finite, mode_combination, StateTrajectory, TransformCoeffs};
use crate::grid::{central_gradient, solve_implicit_diffusion, ScalarField, SpaceTimeGrid};
use crate::model::{reaction_jacobian_scalar, ModelParams};
use crate::noise::BrownianPaths;
use crate::optimizer::{ControlSet, CostSpec};

/// Adjoint states over all time levels. `z_g` and `g_sources` are indexed
/// by control: 0 = beta1, 1 = beta2, 2 = s1, 3 = s2. `g_sources[c][k]` is
/// the G* source driving `z_g[c]` on the step from `t_k` to `t_{k+1}`; the
/// terminal frames of everything are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub z_f1: Vec<ScalarField>,
    pub z_f2: Vec<ScalarField>,
    pub z_g: [Vec<ScalarField>; 4],
    pub g_sources: [Vec<ScalarField>; 4],
    pub seed: u64,
}

fn squared_mode_sum(modes: &[ScalarField], grid: &SpaceTimeGrid) -> ScalarField {
    let mut out = ScalarField::zeros(grid);
    for h in modes {
        out.values.zip_mut_with(&h.values, |o, v| *o += v * v);
    }
    out
}

/// Assembles the backward sources `H1`, `H2` at one time level:
///
/// ```text
/// H1 = -d(r1 + r)/df1 . z1 - d(r2 - r)/df1 . z2 - grad z1 . F1
///      + lambda1 (f1 - r1*) + z1 sum_i h_{i,1}^2
/// ```
///
/// and symmetrically for `H2`. Gradients are central differences; boundary
/// rows are zero.
pub fn adjoint_sources(
    state: &StateTrajectory,
    step: usize,
    z1: &ScalarField,
    z2: &ScalarField,
    controls: &ControlSet,
    cost: &CostSpec,
    params: &ModelParams,
    grid: &SpaceTimeGrid,
) -> (ScalarField, ScalarField) {
    let f1 = &state.f1[step];
    let f2 = &state.f2[step];
    let (z1gx, z1gy) = central_gradient(z1, grid);
    let (z2gx, z2gy) = central_gradient(z2, grid);
    let hsq1 = squared_mode_sum(&params.modes.h1, grid);
    let hsq2 = squared_mode_sum(&params.modes.h2, grid);
    let mut h1 = ScalarField::zeros(grid);
    let mut h2 = ScalarField::zeros(grid);
    for i in 1..grid.nx - 1 {
        for j in 1..grid.ny - 1 {
            let jac = reaction_jacobian_scalar(
                f1.values[[i, j]],
                f2.values[[i, j]],
                controls.beta1[step].values[[i, j]],
                controls.beta2[step].values[[i, j]],
                controls.s1[step].values[[i, j]],
                controls.s2[step].values[[i, j]],
                params,
            );
            let zv1 = z1.values[[i, j]];
            let zv2 = z2.values[[i, j]];
            h1.values[[i, j]] = -(jac.dr1_df1 + jac.dr_df1) * zv1
                - (jac.dr2_df1 - jac.dr_df1) * zv2
                - (z1gx.values[[i, j]] * params.vel1.0.values[[i, j]]
                    + z1gy.values[[i, j]] * params.vel1.1.values[[i, j]])
                + cost.lambda1 * (f1.values[[i, j]] - cost.r1[step].values[[i, j]])
                + zv1 * hsq1.values[[i, j]];
            h2.values[[i, j]] = -(jac.dr1_df2 + jac.dr_df2) * zv1
                - (jac.dr2_df2 - jac.dr_df2) * zv2
                - (z2gx.values[[i, j]] * params.vel2.0.values[[i, j]]
                    + z2gy.values[[i, j]] * params.vel2.1.values[[i, j]])
                + cost.lambda2 * (f2.values[[i, j]] - cost.r2[step].values[[i, j]])
                + zv2 * hsq2.values[[i, j]];
        }
    }
    (h1, h2)
}

fn check_setup(
    state: &StateTrajectory,
    controls: &ControlSet,
    cost: &CostSpec,
    params: &ModelParams,
    paths: &BrownianPaths,
    grid: &SpaceTimeGrid,
) {
    assert_eq!(paths.nt, grid.nt, "Brownian paths sampled for a different nt");
    assert_eq!(
        paths.n_modes,
        params.modes.n_modes(),
        "path count does not match the number of noise modes"
    );
    assert_eq!(state.f1.len(), grid.nt + 1, "state needs nt + 1 frames");
    assert_eq!(state.f2.len(), grid.nt + 1, "state needs nt + 1 frames");
    assert_eq!(controls.beta1.len(), grid.nt + 1, "controls need nt + 1 frames");
    assert_eq!(cost.r1.len(), grid.nt + 1, "cost fields need nt + 1 frames");
}

/// Solves the backward adjoint system along the trajectory's path and
/// integrates the four `z_g` states from their `G*` sources.
pub fn solve_adjoint(
    state: &StateTrajectory,
    controls: &ControlSet,
    cost: &CostSpec,
    params: &ModelParams,
    paths: &BrownianPaths,
    grid: &SpaceTimeGrid,
) -> Result<AdjointTrajectory> {
    check_setup(state, controls, cost, params, paths, grid);
    let dt = grid.dt();
    let nt = grid.nt;
    let zero = ScalarField::zeros(grid);
    let coeffs = [
        TransformCoeffs::build(&params.modes.h1, grid),
        TransformCoeffs::build(&params.modes.h2, grid),
    ];
    let modes = [&params.modes.h1, &params.modes.h2];
    let diffusion = [params.d1, params.d2];
    let lambda = [cost.lambda1, cost.lambda2];
    let targets = [&cost.r1, &cost.r2];
    let states = [&state.f1, &state.f2];

    let mut out = AdjointTrajectory {
        z_f1: vec![zero.clone(); nt + 1],
        z_f2: vec![zero.clone(); nt + 1],
        z_g: std::array::from_fn(|_| vec![zero.clone(); nt + 1]),
        g_sources: std::array::from_fn(|_| vec![zero.clone(); nt + 1]),
        seed: paths.seed,
    };

    // Transformed unknowns at the level above the current step; zero at T.
    let mut zhat = [zero.clone(), zero.clone()];

    for k in (0..nt).rev() {
        // Diffuse each equation's transformed adjoint, with half of the
        // upper level's tracking source folded into the right-hand side.
        let mut exp_next = Vec::with_capacity(2);
        let mut qhat = Vec::with_capacity(2);
        for eq in 0..2 {
            let (e_next, egx, egy, elap) = coeffs[eq].exponent(modes[eq], paths, k + 1, grid);
            let mut rhs = ScalarField::zeros(grid);
            for i in 1..grid.nx - 1 {
                for j in 1..grid.ny - 1 {
                    let residual = states[eq][k + 1].values[[i, j]]
                        - targets[eq][k + 1].values[[i, j]];
                    rhs.values[[i, j]] = zhat[eq].values[[i, j]]
                        - 0.5 * dt * e_next.values[[i, j]].exp() * lambda[eq] * residual;
                }
            }
            let name = if eq == 0 { "adjoint z1" } else { "adjoint z2" };
            qhat.push(solve_implicit_diffusion(&rhs, &zero, diffusion[eq], dt, grid, k, name)?);
            exp_next.push((e_next, egx, egy, elap));
        }

        // Mid-step physical adjoint values and their gradients.
        let mut q = Vec::with_capacity(2);
        for eq in 0..2 {
            let mut f = ScalarField::zeros(grid);
            for i in 1..grid.nx - 1 {
                for j in 1..grid.ny - 1 {
                    f.values[[i, j]] =
                        (-exp_next[eq].0.values[[i, j]]).exp() * qhat[eq].values[[i, j]];
                }
            }
            q.push(f);
        }
        let q_grad = [central_gradient(&q[0], grid), central_gradient(&q[1], grid)];
        let qhat_grad = [
            central_gradient(&qhat[0], grid),
            central_gradient(&qhat[1], grid),
        ];
        let e_curr = [
            mode_combination(modes[0], |m| paths.cumulative[[m, k]], grid),
            mode_combination(modes[1], |m| paths.cumulative[[m, k]], grid),
        ];

        let mut z_new = [ScalarField::zeros(grid), ScalarField::zeros(grid)];
        let mut g_new = std::array::from_fn::<_, 4, _>(|_| ScalarField::zeros(grid));
        let vels = [&params.vel1, &params.vel2];
        for i in 1..grid.nx - 1 {
            for j in 1..grid.ny - 1 {
                let jac = reaction_jacobian_scalar(
                    states[0][k].values[[i, j]],
                    states[1][k].values[[i, j]],
                    controls.beta1[k].values[[i, j]],
                    controls.beta2[k].values[[i, j]],
                    controls.s1[k].values[[i, j]],
                    controls.s2[k].values[[i, j]],
                    params,
                );
                let qv = [q[0].values[[i, j]], q[1].values[[i, j]]];
                // Transposed reaction coupling, rows of d(R1+R, R2-R)/d(f1, f2).
                let coupled = [
                    (jac.dr1_df1 + jac.dr_df1) * qv[0] + (jac.dr2_df1 - jac.dr_df1) * qv[1],
                    (jac.dr1_df2 + jac.dr_df2) * qv[0] + (jac.dr2_df2 - jac.dr_df2) * qv[1],
                ];
                g_new[0].values[[i, j]] = -jac.dr1_dbeta1 * qv[0];
                g_new[1].values[[i, j]] = -jac.dr2_dbeta2 * qv[1];
                g_new[2].values[[i, j]] = jac.dr_ds1 * (qv[1] - qv[0]);
                g_new[3].values[[i, j]] = jac.dr_ds2 * (qv[1] - qv[0]);

                for eq in 0..2 {
                    let (ref e_next, ref egx, ref egy, ref elap) = exp_next[eq];
                    let d = diffusion[eq];
                    let hsq = coeffs[eq].h_sq.values[[i, j]];
                    let advect = vels[eq].0.values[[i, j]] * q_grad[eq].0.values[[i, j]]
                        + vels[eq].1.values[[i, j]] * q_grad[eq].1.values[[i, j]];
                    let lifted = e_next.values[[i, j]].exp()
                        * (coupled[eq] + advect - qv[eq] * hsq);
                    let grad_sq = egx.values[[i, j]] * egx.values[[i, j]]
                        + egy.values[[i, j]] * egy.values[[i, j]];
                    let corr = -2.0
                        * d
                        * (egx.values[[i, j]] * qhat_grad[eq].0.values[[i, j]]
                            + egy.values[[i, j]] * qhat_grad[eq].1.values[[i, j]])
                        + (d * (grad_sq - elap.values[[i, j]]) + 0.5 * hsq)
                            * qhat[eq].values[[i, j]];
                    let residual =
                        states[eq][k].values[[i, j]] - targets[eq][k].values[[i, j]];
                    let zhat_new = qhat[eq].values[[i, j]]
                        + dt * (corr + lifted)
                        - 0.5 * dt * e_curr[eq].values[[i, j]].exp() * lambda[eq] * residual;
                    z_new[eq].values[[i, j]] =
                        (-e_curr[eq].values[[i, j]]).exp() * zhat_new;
                }
            }
        }

        for eq in 0..2 {
            // Carry the transformed variable to the next (earlier) step.
            let mut zh = ScalarField::zeros(grid);
            for i in 1..grid.nx - 1 {
                for j in 1..grid.ny - 1 {
                    zh.values[[i, j]] =
                        e_curr[eq].values[[i, j]].exp() * z_new[eq].values[[i, j]];
                }
            }
            zhat[eq] = zh;
        }
        ensure_finite(&z_new[0], "adjoint z1", k)?;
        ensure_finite(&z_new[1], "adjoint z2", k)?;
        let [z1_new, z2_new] = z_new;
        out.z_f1[k] = z1_new;
        out.z_f2[k] = z2_new;
        for c in 0..4 {
            let mut zg = out.z_g[c][k + 1].clone();
            zg.values
                .zip_mut_with(&g_new[c].values, |z, g| *z -= dt * g);
            ensure_finite(&zg, "adjoint z_g", k)?;
            out.z_g[c][k] = zg;
            out.g_sources[c][k] = g_new[c].clone();
        }
    }
    Ok(out)
}
