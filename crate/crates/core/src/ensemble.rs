//! Monte Carlo orchestration across Brownian paths, plus the control
//! perturbation probe for the stability estimates.
//!
//! Paths are embarrassingly parallel: path `k` draws its own seed from the
//! base seed, solves independently, and the aggregation loops over path
//! index in a fixed order. Results are therefore bitwise identical whatever
//! the worker count or completion order.

use rayon::prelude::*;

use crate::adjoint::solve_adjoint;
use crate::error::{Error, Result};
use crate::forward::solve_forward_em;
use crate::grid::{l2_space_time_diff, ScalarField, SpaceTimeGrid};
use crate::model::ModelParams;
use crate::noise::{path_seed, sample_brownian};
use crate::optimizer::{evaluate_cost, fbs_optimize, ControlSet, CostSpec, FbsOptions};

/// What each path runs: a plain forward solve under the given controls, or
/// a full forward-backward optimization starting from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMode {
    Simulate,
    Optimize,
}

/// Everything a single path needs besides its seed.
#[derive(Debug, Clone, Copy)]
pub struct PathProblem<'a> {
    pub params: &'a ModelParams,
    pub cost: &'a CostSpec,
    pub controls: &'a ControlSet,
    pub grid: &'a SpaceTimeGrid,
    pub options: FbsOptions,
}

/// Pointwise mean/std of the states (and, in optimize mode, the controls)
/// at the requested snapshot steps, with per-path cost and convergence.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub base_seed: u64,
    pub snapshot_steps: Vec<usize>,
    pub snapshot_times: Vec<f64>,
    pub f1_mean: Vec<ScalarField>,
    pub f1_std: Vec<ScalarField>,
    pub f2_mean: Vec<ScalarField>,
    pub f2_std: Vec<ScalarField>,
    /// Indexed by control (beta1, beta2, s1, s2), then snapshot.
    pub control_mean: Option<[Vec<ScalarField>; 4]>,
    pub control_std: Option<[Vec<ScalarField>; 4]>,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub converged: Vec<bool>,
}

struct PathOutcome {
    f1: Vec<ScalarField>,
    f2: Vec<ScalarField>,
    controls: Option<[Vec<ScalarField>; 4]>,
    cost: f64,
    converged: bool,
}

fn snapshot(frames: &[ScalarField], steps: &[usize]) -> Vec<ScalarField> {
    steps.iter().map(|&k| frames[k].clone()).collect()
}

fn mean_std(per_path: &[Vec<ScalarField>], grid: &SpaceTimeGrid) -> (Vec<ScalarField>, Vec<ScalarField>) {
    let n = per_path.len();
    let n_snaps = per_path[0].len();
    let mut means = Vec::with_capacity(n_snaps);
    let mut stds = Vec::with_capacity(n_snaps);
    for s in 0..n_snaps {
        let mut mean = ScalarField::zeros(grid);
        for outcome in per_path {
            mean.values.zip_mut_with(&outcome[s].values, |m, v| *m += v);
        }
        mean.values.mapv_inplace(|m| m / n as f64);
        let mut var = ScalarField::zeros(grid);
        for outcome in per_path {
            for ((v, m), acc) in outcome[s]
                .values
                .iter()
                .zip(mean.values.iter())
                .zip(var.values.iter_mut())
            {
                let d = v - m;
                *acc += d * d;
            }
        }
        var.values.mapv_inplace(|v| (v / n as f64).sqrt());
        means.push(mean);
        stds.push(var);
    }
    (means, stds)
}

/// Runs `n_paths` independent paths and aggregates pointwise statistics at
/// the snapshot steps. Any hard solver error aborts with its path index;
/// per-path non-convergence of the optimizer is only recorded.
pub fn run_ensemble(
    problem: &PathProblem,
    n_paths: usize,
    base_seed: u64,
    mode: EnsembleMode,
    snapshot_steps: &[usize],
) -> Result<EnsembleSummary> {
    assert!(n_paths >= 1, "ensemble needs at least one path");
    assert!(
        snapshot_steps.iter().all(|&k| k <= problem.grid.nt),
        "snapshot step out of range"
    );
    let n_modes = problem.params.modes.n_modes();

    let outcomes: Vec<PathOutcome> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let seed = path_seed(base_seed, k);
            let paths = sample_brownian(seed, n_modes, problem.grid);
            let run = || -> Result<PathOutcome> {
                match mode {
                    EnsembleMode::Simulate => {
                        let state =
                            solve_forward_em(problem.params, problem.controls, &paths, problem.grid)?;
                        let cost =
                            evaluate_cost(&state, problem.controls, problem.cost, problem.grid);
                        Ok(PathOutcome {
                            f1: snapshot(&state.f1, snapshot_steps),
                            f2: snapshot(&state.f2, snapshot_steps),
                            controls: None,
                            cost,
                            converged: true,
                        })
                    }
                    EnsembleMode::Optimize => {
                        let (c, state, _, report) = fbs_optimize(
                            problem.params,
                            problem.cost,
                            problem.controls,
                            &paths,
                            problem.grid,
                            &problem.options,
                        )?;
                        let cost = evaluate_cost(&state, &c, problem.cost, problem.grid);
                        Ok(PathOutcome {
                            f1: snapshot(&state.f1, snapshot_steps),
                            f2: snapshot(&state.f2, snapshot_steps),
                            controls: Some([
                                snapshot(&c.beta1, snapshot_steps),
                                snapshot(&c.beta2, snapshot_steps),
                                snapshot(&c.s1, snapshot_steps),
                                snapshot(&c.s2, snapshot_steps),
                            ]),
                            cost,
                            converged: report.converged,
                        })
                    }
                }
            };
            run().map_err(|e| Error::Path { index: k, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;

    let f1_per_path: Vec<_> = outcomes.iter().map(|o| o.f1.clone()).collect();
    let f2_per_path: Vec<_> = outcomes.iter().map(|o| o.f2.clone()).collect();
    let (f1_mean, f1_std) = mean_std(&f1_per_path, problem.grid);
    let (f2_mean, f2_std) = mean_std(&f2_per_path, problem.grid);

    let (control_mean, control_std) = if mode == EnsembleMode::Optimize {
        let mut means: Vec<Vec<ScalarField>> = Vec::with_capacity(4);
        let mut stds: Vec<Vec<ScalarField>> = Vec::with_capacity(4);
        for c in 0..4 {
            let per_path: Vec<_> = outcomes
                .iter()
                .map(|o| o.controls.as_ref().expect("optimize outcome has controls")[c].clone())
                .collect();
            let (m, s) = mean_std(&per_path, problem.grid);
            means.push(m);
            stds.push(s);
        }
        let into4 = |mut v: Vec<Vec<ScalarField>>| {
            let d = v.pop().unwrap();
            let c = v.pop().unwrap();
            let b = v.pop().unwrap();
            let a = v.pop().unwrap();
            [a, b, c, d]
        };
        (Some(into4(means)), Some(into4(stds)))
    } else {
        (None, None)
    };

    let n = n_paths as f64;
    let cost_mean = outcomes.iter().map(|o| o.cost).sum::<f64>() / n;
    let cost_std = (outcomes
        .iter()
        .map(|o| (o.cost - cost_mean) * (o.cost - cost_mean))
        .sum::<f64>()
        / n)
        .sqrt();

    Ok(EnsembleSummary {
        n_paths,
        base_seed,
        snapshot_steps: snapshot_steps.to_vec(),
        snapshot_times: snapshot_steps.iter().map(|&k| problem.grid.t(k)).collect(),
        f1_mean,
        f1_std,
        f2_mean,
        f2_std,
        control_mean,
        control_std,
        cost_mean,
        cost_std,
        converged: outcomes.iter().map(|o| o.converged).collect(),
    })
}

/// One row of the stability table: control perturbation size and the
/// resulting L2 space-time deviations of the state pair and of all six
/// adjoint states, on one fixed path.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub delta: f64,
    pub state_deviation: f64,
    pub adjoint_deviation: f64,
}

/// Smooth perturbation profile: unit-bounded, vanishing on the boundary.
pub fn unit_bump(grid: &SpaceTimeGrid) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| {
        (std::f64::consts::PI * x / grid.lx).sin() * (std::f64::consts::PI * y / grid.ly).sin()
    })
}

/// Shifts all four controls of `base` by `delta` times the unit bump and
/// measures how far state and adjoint move, per probed `delta`, on the path
/// drawn from `seed`. Perturbed controls must stay inside their box.
pub fn stability_probe(
    params: &ModelParams,
    cost: &CostSpec,
    base: &ControlSet,
    deltas: &[f64],
    seed: u64,
    grid: &SpaceTimeGrid,
) -> Result<Vec<StabilityRow>> {
    let paths = sample_brownian(seed, params.modes.n_modes(), grid);
    let base_state = solve_forward_em(params, base, &paths, grid)?;
    let base_adj = solve_adjoint(&base_state, base, cost, params, &paths, grid)?;
    let bump = unit_bump(grid);

    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut perturbed = base.clone();
        for frames in perturbed.fields_mut() {
            for f in frames.iter_mut() {
                f.values.zip_mut_with(&bump.values, |v, w| *v += delta * w);
            }
        }
        if !perturbed.is_admissible() {
            return Err(Error::Precondition(format!(
                "stability probe at delta = {delta} pushes a control outside its bounds"
            )));
        }
        let state = solve_forward_em(params, &perturbed, &paths, grid)?;
        let adj = solve_adjoint(&state, &perturbed, cost, params, &paths, grid)?;

        let sd1 = l2_space_time_diff(&state.f1, &base_state.f1, grid);
        let sd2 = l2_space_time_diff(&state.f2, &base_state.f2, grid);
        let mut adj_sq = l2_space_time_diff(&adj.z_f1, &base_adj.z_f1, grid).powi(2)
            + l2_space_time_diff(&adj.z_f2, &base_adj.z_f2, grid).powi(2);
        for c in 0..4 {
            adj_sq += l2_space_time_diff(&adj.z_g[c], &base_adj.z_g[c], grid).powi(2);
        }
        rows.push(StabilityRow {
            delta,
            state_deviation: (sd1 * sd1 + sd2 * sd2).sqrt(),
            adjoint_deviation: adj_sq.sqrt(),
        });
    }
    Ok(rows)
}
