//! Cost functional, box projection, forward-backward sweeps, and the
//! adjoint-vs-finite-difference gradient check.
//!
//! The running cost is
//!
//! ```text
//! J = integral over [0,T] x Omega of
//!     (beta1-b1)^2 + (beta2-b2)^2 + lambda1 (f1-r1)^2 + lambda2 (f2-r2)^2
//!   + (s1-r3)^2 + (s2-r4)^2
//! ```
//!
//! The first-order conditions project `b - G*` onto the admissible box,
//! where the `G*` sources come out of the adjoint solve. [`fbs_optimize`]
//! iterates that map with damping until the controls stop moving; the
//! controls, state, and adjoint it returns belong to the final evaluated
//! iterate, so the reported defect is exactly the fixed-point residual of
//! the returned controls.

use serde::Serialize;

use crate::adjoint::{solve_adjoint, AdjointTrajectory};
use crate::error::{Error, Result};
use crate::forward::{solve_forward_em, StateTrajectory};
use crate::grid::{integrate_space, ScalarField, SpaceTimeGrid};
use crate::model::ModelParams;
use crate::noise::BrownianPaths;

/// Projection onto `[u, v]`. Bounds must satisfy `u <= v`.
#[inline]
pub fn clamp(x: f64, u: f64, v: f64) -> f64 {
    assert!(u <= v, "clamp: inverted bounds u={u} > v={v}");
    debug_assert!(!x.is_nan(), "clamp: NaN input");
    if x < u {
        u
    } else if x > v {
        v
    } else {
        x
    }
}

/// Lower/upper bound frames for one control.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPair {
    pub lo: Vec<ScalarField>,
    pub hi: Vec<ScalarField>,
}

impl BoundPair {
    pub fn constant(grid: &SpaceTimeGrid, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![ScalarField::constant(grid, lo); grid.nt + 1],
            hi: vec![ScalarField::constant(grid, hi); grid.nt + 1],
        }
    }
}

/// Box bounds for all four controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    pub beta1: BoundPair,
    pub beta2: BoundPair,
    pub s1: BoundPair,
    pub s2: BoundPair,
}

impl ControlBounds {
    pub fn pairs(&self) -> [&BoundPair; 4] {
        [&self.beta1, &self.beta2, &self.s1, &self.s2]
    }
}

pub const CONTROL_NAMES: [&str; 4] = ["beta1", "beta2", "s1", "s2"];

/// The four space-time controls and their admissible box.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub beta1: Vec<ScalarField>,
    pub beta2: Vec<ScalarField>,
    pub s1: Vec<ScalarField>,
    pub s2: Vec<ScalarField>,
    pub bounds: ControlBounds,
}

impl ControlSet {
    pub fn constant(grid: &SpaceTimeGrid, values: [f64; 4], bounds: [(f64, f64); 4]) -> Self {
        let frames = |v: f64| vec![ScalarField::constant(grid, v); grid.nt + 1];
        Self {
            beta1: frames(values[0]),
            beta2: frames(values[1]),
            s1: frames(values[2]),
            s2: frames(values[3]),
            bounds: ControlBounds {
                beta1: BoundPair::constant(grid, bounds[0].0, bounds[0].1),
                beta2: BoundPair::constant(grid, bounds[1].0, bounds[1].1),
                s1: BoundPair::constant(grid, bounds[2].0, bounds[2].1),
                s2: BoundPair::constant(grid, bounds[3].0, bounds[3].1),
            },
        }
    }

    pub fn fields(&self) -> [&Vec<ScalarField>; 4] {
        [&self.beta1, &self.beta2, &self.s1, &self.s2]
    }

    pub fn fields_mut(&mut self) -> [&mut Vec<ScalarField>; 4] {
        [&mut self.beta1, &mut self.beta2, &mut self.s1, &mut self.s2]
    }

    /// Shape checks plus bound ordering `lo <= hi` at every node and level.
    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<()> {
        for (name, frames) in CONTROL_NAMES.iter().zip(self.fields()) {
            if frames.len() != grid.nt + 1 {
                return Err(Error::Validation(format!(
                    "control {name} has {} frames, expected {}",
                    frames.len(),
                    grid.nt + 1
                )));
            }
            for (k, f) in frames.iter().enumerate() {
                if !f.matches(grid) {
                    return Err(Error::Validation(format!("control {name}[{k}] does not match the grid")));
                }
                if !f.is_finite() {
                    return Err(Error::Validation(format!("control {name}[{k}] has non-finite entries")));
                }
            }
        }
        for (name, pair) in CONTROL_NAMES.iter().zip(self.bounds.pairs()) {
            if pair.lo.len() != grid.nt + 1 || pair.hi.len() != grid.nt + 1 {
                return Err(Error::Validation(format!(
                    "bounds for {name} need {} frames",
                    grid.nt + 1
                )));
            }
            for k in 0..=grid.nt {
                for i in 0..grid.nx {
                    for j in 0..grid.ny {
                        let (lo, hi) = (pair.lo[k].values[[i, j]], pair.hi[k].values[[i, j]]);
                        if !(lo <= hi) {
                            return Err(Error::Validation(format!(
                                "bounds for {name} inverted at level {k}, node ({i},{j}): {lo} > {hi}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// True when every control sits inside its box everywhere.
    pub fn is_admissible(&self) -> bool {
        for (frames, pair) in self.fields().into_iter().zip(self.bounds.pairs()) {
            for k in 0..frames.len() {
                let c = &frames[k].values;
                let lo = &pair.lo[k].values;
                let hi = &pair.hi[k].values;
                for ((c, lo), hi) in c.iter().zip(lo.iter()).zip(hi.iter()) {
                    if c < lo || c > hi {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Projects every control onto its box, in place.
    pub fn project(&mut self) {
        let bounds = self.bounds.clone();
        for (frames, pair) in self.fields_mut().into_iter().zip(bounds.pairs()) {
            for k in 0..frames.len() {
                let lo = &pair.lo[k].values;
                let hi = &pair.hi[k].values;
                for ((c, lo), hi) in frames[k].values.iter_mut().zip(lo.iter()).zip(hi.iter()) {
                    *c = clamp(*c, *lo, *hi);
                }
            }
        }
    }
}

/// Default starting controls: the cost baselines `b1`, `b2` and status
/// targets `r3`, `r4`, projected onto the box. This is the fixed point of
/// the decoupled problem (zero adjoint), so it is the natural first guess.
pub fn baseline_controls(cost: &CostSpec, bounds: &ControlBounds) -> ControlSet {
    let mut out = ControlSet {
        beta1: cost.b1.clone(),
        beta2: cost.b2.clone(),
        s1: cost.r3.clone(),
        s2: cost.r4.clone(),
        bounds: bounds.clone(),
    };
    out.project();
    out
}

/// Perturbation direction for the four controls (no bounds attached).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDirection {
    pub beta1: Vec<ScalarField>,
    pub beta2: Vec<ScalarField>,
    pub s1: Vec<ScalarField>,
    pub s2: Vec<ScalarField>,
}

impl ControlDirection {
    pub fn constant(grid: &SpaceTimeGrid, values: [f64; 4]) -> Self {
        let frames = |v: f64| vec![ScalarField::constant(grid, v); grid.nt + 1];
        Self {
            beta1: frames(values[0]),
            beta2: frames(values[1]),
            s1: frames(values[2]),
            s2: frames(values[3]),
        }
    }

    pub fn fields(&self) -> [&Vec<ScalarField>; 4] {
        [&self.beta1, &self.beta2, &self.s1, &self.s2]
    }

    /// `controls + eps * direction`, keeping the original bounds.
    pub fn applied_to(&self, controls: &ControlSet, eps: f64) -> ControlSet {
        let mut out = controls.clone();
        for (frames, dir) in out.fields_mut().into_iter().zip(self.fields()) {
            for k in 0..frames.len() {
                frames[k]
                    .values
                    .zip_mut_with(&dir[k].values, |c, d| *c += eps * d);
            }
        }
        out
    }
}

/// Cost data: tracking weights and targets, and baseline growth rates.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Density targets for f1 and f2.
    pub r1: Vec<ScalarField>,
    pub r2: Vec<ScalarField>,
    /// Status targets for s1 and s2.
    pub r3: Vec<ScalarField>,
    pub r4: Vec<ScalarField>,
    /// Baseline growth rates for beta1 and beta2.
    pub b1: Vec<ScalarField>,
    pub b2: Vec<ScalarField>,
}

impl CostSpec {
    pub fn constant(grid: &SpaceTimeGrid, lambda: (f64, f64), r: [f64; 4], b: [f64; 2]) -> Self {
        let frames = |v: f64| vec![ScalarField::constant(grid, v); grid.nt + 1];
        Self {
            lambda1: lambda.0,
            lambda2: lambda.1,
            r1: frames(r[0]),
            r2: frames(r[1]),
            r3: frames(r[2]),
            r4: frames(r[3]),
            b1: frames(b[0]),
            b2: frames(b[1]),
        }
    }

    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return Err(Error::Validation(format!(
                "tracking weights must be nonnegative, got lambda1={}, lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        for (name, frames) in [
            ("r1", &self.r1),
            ("r2", &self.r2),
            ("r3", &self.r3),
            ("r4", &self.r4),
            ("b1", &self.b1),
            ("b2", &self.b2),
        ] {
            if frames.len() != grid.nt + 1 {
                return Err(Error::Validation(format!(
                    "cost field {name} has {} frames, expected {}",
                    frames.len(),
                    grid.nt + 1
                )));
            }
            for (k, f) in frames.iter().enumerate() {
                if !f.matches(grid) || !f.is_finite() {
                    return Err(Error::Validation(format!("cost field {name}[{k}] invalid")));
                }
            }
        }
        Ok(())
    }
}

/// Quadratic tracking cost of one trajectory under given controls.
pub fn evaluate_cost(
    state: &StateTrajectory,
    controls: &ControlSet,
    cost: &CostSpec,
    grid: &SpaceTimeGrid,
) -> f64 {
    assert_eq!(state.f1.len(), grid.nt + 1, "trajectory frame count mismatch");
    let dt = grid.dt();
    let mut total = 0.0;
    let mut frame = ScalarField::zeros(grid);
    for k in 0..=grid.nt {
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let db1 = controls.beta1[k].values[[i, j]] - cost.b1[k].values[[i, j]];
                let db2 = controls.beta2[k].values[[i, j]] - cost.b2[k].values[[i, j]];
                let df1 = state.f1[k].values[[i, j]] - cost.r1[k].values[[i, j]];
                let df2 = state.f2[k].values[[i, j]] - cost.r2[k].values[[i, j]];
                let ds1 = controls.s1[k].values[[i, j]] - cost.r3[k].values[[i, j]];
                let ds2 = controls.s2[k].values[[i, j]] - cost.r4[k].values[[i, j]];
                frame.values[[i, j]] = db1 * db1
                    + db2 * db2
                    + cost.lambda1 * df1 * df1
                    + cost.lambda2 * df2 * df2
                    + ds1 * ds1
                    + ds2 * ds2;
            }
        }
        let wt = if k == 0 || k == grid.nt { 0.5 } else { 1.0 };
        total += wt * dt * integrate_space(&frame, grid);
    }
    total
}

/// Projected candidate controls from the first-order conditions:
/// `beta = clamp(b - G*_beta)`, `s = clamp(r - G*_s)` node by node.
pub fn update_controls(
    adjoint: &AdjointTrajectory,
    cost: &CostSpec,
    bounds: &ControlBounds,
    grid: &SpaceTimeGrid,
) -> ControlSet {
    let refs = [&cost.b1, &cost.b2, &cost.r3, &cost.r4];
    let mut out = ControlSet {
        beta1: Vec::with_capacity(grid.nt + 1),
        beta2: Vec::with_capacity(grid.nt + 1),
        s1: Vec::with_capacity(grid.nt + 1),
        s2: Vec::with_capacity(grid.nt + 1),
        bounds: bounds.clone(),
    };
    for (c, (source, (reference, pair))) in out
        .fields_mut()
        .into_iter()
        .zip(adjoint.g_sources.iter().zip(refs.into_iter().zip(bounds.pairs())))
    {
        for k in 0..=grid.nt {
            let mut f = ScalarField::zeros(grid);
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    let raw = reference[k].values[[i, j]] - source[k].values[[i, j]];
                    f.values[[i, j]] =
                        clamp(raw, pair.lo[k].values[[i, j]], pair.hi[k].values[[i, j]]);
                }
            }
            c.push(f);
        }
    }
    out
}

/// L2(Q_T) norm over all four controls.
pub fn control_norm(c: &ControlSet, grid: &SpaceTimeGrid) -> f64 {
    let dt = grid.dt();
    let mut acc = 0.0;
    for frames in c.fields() {
        for k in 0..=grid.nt {
            let wt = if k == 0 || k == grid.nt { 0.5 } else { 1.0 };
            let mut s = 0.0;
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    let v = frames[k].values[[i, j]];
                    let wx = if i == 0 || i == grid.nx - 1 { 0.5 } else { 1.0 };
                    let wy = if j == 0 || j == grid.ny - 1 { 0.5 } else { 1.0 };
                    s += wx * wy * v * v;
                }
            }
            acc += wt * dt * s * grid.dx() * grid.dy();
        }
    }
    acc.sqrt()
}

/// L2(Q_T) distance between two control sets.
pub fn control_distance(a: &ControlSet, b: &ControlSet, grid: &SpaceTimeGrid) -> f64 {
    let dt = grid.dt();
    let mut acc = 0.0;
    for (fa, fb) in a.fields().into_iter().zip(b.fields()) {
        for k in 0..=grid.nt {
            let wt = if k == 0 || k == grid.nt { 0.5 } else { 1.0 };
            let mut s = 0.0;
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    let d = fa[k].values[[i, j]] - fb[k].values[[i, j]];
                    let wx = if i == 0 || i == grid.nx - 1 { 0.5 } else { 1.0 };
                    let wy = if j == 0 || j == grid.ny - 1 { 0.5 } else { 1.0 };
                    s += wx * wy * d * d;
                }
            }
            acc += wt * dt * s * grid.dx() * grid.dy();
        }
    }
    acc.sqrt()
}

/// Forward-backward sweep options.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FbsOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FbsOptions {
    fn default() -> Self {
        Self { damping: 0.5, tol: 1e-6, max_iter: 500 }
    }
}

/// Outcome of [`fbs_optimize`].
#[derive(Debug, Clone, Serialize)]
pub struct OptimizationReport {
    pub iterations: usize,
    pub cost_history: Vec<f64>,
    pub control_residual_history: Vec<f64>,
    /// Absolute L2 defect `||c - projected(c)||` of the returned controls.
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Damped fixed-point iteration on the projected first-order map. Runs along
/// one fixed noise path. Non-convergence within `max_iter` is reported, not
/// an error.
pub fn fbs_optimize(
    params: &ModelParams,
    cost: &CostSpec,
    initial: &ControlSet,
    paths: &BrownianPaths,
    grid: &SpaceTimeGrid,
    options: &FbsOptions,
) -> Result<(ControlSet, StateTrajectory, AdjointTrajectory, OptimizationReport)> {
    assert!(
        options.damping > 0.0 && options.damping <= 1.0,
        "damping must lie in (0, 1]"
    );
    initial.validate(grid)?;
    let mut current = initial.clone();
    current.project();

    let mut cost_history = Vec::new();
    let mut residual_history = Vec::new();
    for iter in 1..=options.max_iter {
        let state = solve_forward_em(params, &current, paths, grid)?;
        let adj = solve_adjoint(&state, &current, cost, params, paths, grid)?;
        let candidate = update_controls(&adj, cost, &current.bounds, grid);
        let defect = control_distance(&current, &candidate, grid);
        let rel_defect = defect / (1.0 + control_norm(&current, grid));
        cost_history.push(evaluate_cost(&state, &current, cost, grid));
        residual_history.push(rel_defect);

        if rel_defect < options.tol || iter == options.max_iter {
            let report = OptimizationReport {
                iterations: iter,
                cost_history,
                control_residual_history: residual_history,
                kkt_residual: defect,
                converged: rel_defect < options.tol,
            };
            return Ok((current, state, adj, report));
        }
        let d = options.damping;
        for (c, p) in current.fields_mut().into_iter().zip(candidate.fields()) {
            for k in 0..c.len() {
                c[k].values
                    .zip_mut_with(&p[k].values, |cv, pv| *cv = (1.0 - d) * *cv + d * *pv);
            }
        }
    }
    unreachable!("loop returns at max_iter");
}

/// One finite-difference probe of the gradient check.
#[derive(Debug, Clone, Serialize)]
pub struct GradientProbe {
    pub eps: f64,
    pub fd_derivative: f64,
    pub relative_error: f64,
}

/// Result of [`gradient_check`].
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheckReport {
    pub adjoint_derivative: f64,
    pub probes: Vec<GradientProbe>,
    pub min_relative_error: f64,
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares the adjoint-based directional derivative of J with central
/// finite differences along `direction`, using the same Brownian path for
/// every solve. The adjoint side is
/// `2 * integral of (control residual + G*) . direction`; the control
/// residual term uses the same trapezoid quadrature as J, and the `G*` term
/// uses the per-step rectangle sum matching the backward integration of the
/// adjoint sources. The base controls must sit strictly inside their box.
pub fn gradient_check(
    params: &ModelParams,
    cost: &CostSpec,
    controls: &ControlSet,
    direction: &ControlDirection,
    paths: &BrownianPaths,
    grid: &SpaceTimeGrid,
    eps_list: &[f64],
) -> Result<GradientCheckReport> {
    controls.validate(grid)?;
    for (name, (frames, pair)) in CONTROL_NAMES
        .iter()
        .zip(controls.fields().into_iter().zip(controls.bounds.pairs()))
    {
        for k in 0..=grid.nt {
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    let c = frames[k].values[[i, j]];
                    if c <= pair.lo[k].values[[i, j]] || c >= pair.hi[k].values[[i, j]] {
                        return Err(Error::Precondition(format!(
                            "gradient check needs controls strictly inside their bounds; {name} touches a bound at level {k}, node ({i},{j})"
                        )));
                    }
                }
            }
        }
    }

    let state = solve_forward_em(params, controls, paths, grid)?;
    let adj = solve_adjoint(&state, controls, cost, params, paths, grid)?;

    let refs = [&cost.b1, &cost.b2, &cost.r3, &cost.r4];
    let dt = grid.dt();
    let mut residual_part = 0.0;
    let mut source_part = 0.0;
    for (c_idx, (frames, dir)) in controls.fields().into_iter().zip(direction.fields()).enumerate() {
        for k in 0..=grid.nt {
            let wt = if k == 0 || k == grid.nt { 0.5 } else { 1.0 };
            let mut res = 0.0;
            let mut src = 0.0;
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    let wx = if i == 0 || i == grid.nx - 1 { 0.5 } else { 1.0 };
                    let wy = if j == 0 || j == grid.ny - 1 { 0.5 } else { 1.0 };
                    let w = wx * wy;
                    let d = dir[k].values[[i, j]];
                    res += w * (frames[k].values[[i, j]] - refs[c_idx][k].values[[i, j]]) * d;
                    src += w * adj.g_sources[c_idx][k].values[[i, j]] * d;
                }
            }
            residual_part += wt * dt * res * grid.dx() * grid.dy();
            // G* vanishes at the terminal level, so the plain per-step sum
            // is the matching quadrature for the backward source rule.
            source_part += dt * src * grid.dx() * grid.dy();
        }
    }
    let adjoint_derivative = 2.0 * (residual_part + source_part);

    let mut probes = Vec::with_capacity(eps_list.len());
    let mut min_rel = f64::INFINITY;
    for &eps in eps_list {
        assert!(eps > 0.0, "gradient check eps must be positive");
        let plus = direction.applied_to(controls, eps);
        let minus = direction.applied_to(controls, -eps);
        let j_plus = evaluate_cost(&solve_forward_em(params, &plus, paths, grid)?, &plus, cost, grid);
        let j_minus = evaluate_cost(&solve_forward_em(params, &minus, paths, grid)?, &minus, cost, grid);
        let fd = (j_plus - j_minus) / (2.0 * eps);
        let rel = relative_gap(adjoint_derivative, fd);
        min_rel = min_rel.min(rel);
        probes.push(GradientProbe { eps, fd_derivative: fd, relative_error: rel });
    }
    Ok(GradientCheckReport {
        adjoint_derivative,
        probes,
        min_relative_error: min_rel,
    })
}
