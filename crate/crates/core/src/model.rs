//! Model parameters and reaction kinetics.
//!
//! Both populations grow logistically against a shared capacity `N`:
//! `R1 = beta1 f1 (1 - (f1+f2)/N)`, `R2 = beta2 f2 (1 - (f1+f2)/N)`.
//! Conversion between the groups is status-mediated,
//! `R = k (s1 pow+(f1, alpha) f2 - s2 f1 pow+(f2, alpha))`,
//! entering the first equation with `+R` and the second with `-R`.
//! `pow+(x, a) = max(x, 0)^a` keeps fractional powers real if a density
//! undershoots zero.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, SpaceTimeGrid};
use crate::noise::{validate_modes, NoiseModes};

/// Regularization floor used in derivatives of `pow+` near zero.
pub const EPS_POW: f64 = 1e-8;

/// Truncated power `max(x, 0)^alpha`.
#[inline]
pub fn pow_plus(x: f64, alpha: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x.powf(alpha)
    }
}

/// Derivative of `pow_plus` in `x`, regularized below `EPS_POW` so the
/// adjoint stays bounded when a density touches zero or `alpha < 1`.
#[inline]
pub fn dpow_plus(x: f64, alpha: f64) -> f64 {
    if alpha >= 1.0 && x > 0.0 {
        alpha * x.powf(alpha - 1.0)
    } else {
        alpha * x.max(EPS_POW).powf(alpha - 1.0)
    }
}

/// Static problem data: coefficients, advection fields, noise modes,
/// initial and boundary values.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub d1: f64,
    pub d2: f64,
    /// Advection field of the first equation, `(vx, vy)` node values.
    pub vel1: (ScalarField, ScalarField),
    pub vel2: (ScalarField, ScalarField),
    /// Conversion strength, >= 0.
    pub k: f64,
    /// Status exponent, > 0.
    pub alpha: f64,
    /// Shared carrying capacity, > 0.
    pub capacity: f64,
    pub modes: NoiseModes,
    /// Initial densities at t = 0.
    pub f0_1: ScalarField,
    pub f0_2: ScalarField,
    /// Dirichlet data per time level (`nt + 1` frames); only boundary nodes
    /// are read.
    pub fb_1: Vec<ScalarField>,
    pub fb_2: Vec<ScalarField>,
    /// When set, solvers clip negative densities to zero after each step.
    pub floor_at_zero: bool,
}

impl ModelParams {
    /// Checks coefficient signs, field shapes, noise modes, frame counts,
    /// and that initial and boundary data agree at t = 0 on boundary nodes
    /// to within 1e-10.
    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if !(self.d1 >= 0.0) || !(self.d2 >= 0.0) {
            return Err(Error::Validation(format!(
                "diffusivities must be nonnegative, got d1={}, d2={}",
                self.d1, self.d2
            )));
        }
        if !(self.k >= 0.0) {
            return Err(Error::Validation(format!("conversion strength k={} must be >= 0", self.k)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Validation(format!("status exponent alpha={} must be > 0", self.alpha)));
        }
        if !(self.capacity > 0.0) {
            return Err(Error::Validation(format!("capacity N={} must be > 0", self.capacity)));
        }
        for (name, f) in [
            ("vel1.x", &self.vel1.0),
            ("vel1.y", &self.vel1.1),
            ("vel2.x", &self.vel2.0),
            ("vel2.y", &self.vel2.1),
            ("f0_1", &self.f0_1),
            ("f0_2", &self.f0_2),
        ] {
            if !f.matches(grid) {
                return Err(Error::Validation(format!("field {name} does not match the grid")));
            }
            if !f.is_finite() {
                return Err(Error::Validation(format!("field {name} has non-finite entries")));
            }
        }
        validate_modes(&self.modes, grid)?;
        for (name, frames) in [("fb_1", &self.fb_1), ("fb_2", &self.fb_2)] {
            if frames.len() != grid.nt + 1 {
                return Err(Error::Validation(format!(
                    "{name} has {} frames, expected {}",
                    frames.len(),
                    grid.nt + 1
                )));
            }
            for (k, f) in frames.iter().enumerate() {
                if !f.matches(grid) {
                    return Err(Error::Validation(format!("{name}[{k}] does not match the grid")));
                }
                if !f.is_finite() {
                    return Err(Error::Validation(format!("{name}[{k}] has non-finite entries")));
                }
            }
        }
        for (name, f0, fb0) in [("1", &self.f0_1, &self.fb_1[0]), ("2", &self.f0_2, &self.fb_2[0])] {
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    if grid.is_boundary(i, j) {
                        let gap = (f0.values[[i, j]] - fb0.values[[i, j]]).abs();
                        if gap > 1e-10 {
                            return Err(Error::Validation(format!(
                                "initial and boundary data for f{name} disagree at t=0, node ({i},{j}): |gap| = {gap:e}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reaction values at one state point.
#[inline]
pub fn reaction_scalar(
    f1: f64,
    f2: f64,
    beta1: f64,
    beta2: f64,
    s1: f64,
    s2: f64,
    params: &ModelParams,
) -> (f64, f64, f64) {
    debug_assert!(f1.is_finite() && f2.is_finite(), "non-finite density in reaction");
    debug_assert!(
        beta1.is_finite() && beta2.is_finite() && s1.is_finite() && s2.is_finite(),
        "non-finite control in reaction"
    );
    let logistic = 1.0 - (f1 + f2) / params.capacity;
    let r1 = beta1 * f1 * logistic;
    let r2 = beta2 * f2 * logistic;
    let r = params.k * (s1 * pow_plus(f1, params.alpha) * f2 - s2 * f1 * pow_plus(f2, params.alpha));
    (r1, r2, r)
}

/// The ten reaction partials at one state point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionJacobian {
    pub dr1_df1: f64,
    pub dr1_df2: f64,
    pub dr2_df1: f64,
    pub dr2_df2: f64,
    pub dr_df1: f64,
    pub dr_df2: f64,
    pub dr1_dbeta1: f64,
    pub dr2_dbeta2: f64,
    pub dr_ds1: f64,
    pub dr_ds2: f64,
}

/// Analytic partials of [`reaction_scalar`] at one state point.
#[inline]
pub fn reaction_jacobian_scalar(
    f1: f64,
    f2: f64,
    beta1: f64,
    beta2: f64,
    s1: f64,
    s2: f64,
    params: &ModelParams,
) -> ReactionJacobian {
    let n = params.capacity;
    let (k, a) = (params.k, params.alpha);
    let logistic = 1.0 - (f1 + f2) / n;
    ReactionJacobian {
        dr1_df1: beta1 * (logistic - f1 / n),
        dr1_df2: -beta1 * f1 / n,
        dr2_df1: -beta2 * f2 / n,
        dr2_df2: beta2 * (logistic - f2 / n),
        dr_df1: k * (s1 * dpow_plus(f1, a) * f2 - s2 * pow_plus(f2, a)),
        dr_df2: k * (s1 * pow_plus(f1, a) - s2 * f1 * dpow_plus(f2, a)),
        dr1_dbeta1: f1 * logistic,
        dr2_dbeta2: f2 * logistic,
        dr_ds1: k * pow_plus(f1, a) * f2,
        dr_ds2: -k * f1 * pow_plus(f2, a),
    }
}

/// Field version of [`reaction_scalar`]: applies it node by node.
pub fn reaction_terms(
    f1: &ScalarField,
    f2: &ScalarField,
    beta1: &ScalarField,
    beta2: &ScalarField,
    s1: &ScalarField,
    s2: &ScalarField,
    params: &ModelParams,
) -> (ScalarField, ScalarField, ScalarField) {
    let dim = f1.values.dim();
    for (name, f) in [("f2", f2), ("beta1", beta1), ("beta2", beta2), ("s1", s1), ("s2", s2)] {
        assert_eq!(f.values.dim(), dim, "reaction_terms: {name} shape mismatch");
    }
    let mut r1 = ScalarField { values: ndarray::Array2::zeros(dim) };
    let mut r2 = r1.clone();
    let mut r = r1.clone();
    for i in 0..dim.0 {
        for j in 0..dim.1 {
            let (a, b, c) = reaction_scalar(
                f1.values[[i, j]],
                f2.values[[i, j]],
                beta1.values[[i, j]],
                beta2.values[[i, j]],
                s1.values[[i, j]],
                s2.values[[i, j]],
                params,
            );
            r1.values[[i, j]] = a;
            r2.values[[i, j]] = b;
            r.values[[i, j]] = c;
        }
    }
    (r1, r2, r)
}

/// Uniform unit-density parameters for tests in this crate.
#[cfg(test)]
pub(crate) fn bare_params(
    grid: &crate::grid::SpaceTimeGrid,
    k: f64,
    alpha: f64,
    capacity: f64,
) -> ModelParams {
    let zero = ScalarField::zeros(grid);
    let one = ScalarField::constant(grid, 1.0);
    ModelParams {
        d1: 0.01,
        d2: 0.01,
        vel1: (zero.clone(), zero.clone()),
        vel2: (zero.clone(), zero.clone()),
        k,
        alpha,
        capacity,
        modes: crate::noise::default_modes(2, 0.1, grid),
        f0_1: one.clone(),
        f0_2: one.clone(),
        fb_1: vec![one.clone(); grid.nt + 1],
        fb_2: vec![one; grid.nt + 1],
        floor_at_zero: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;

    #[test]
    fn logistic_growth_at_a_known_point() {
        // beta1 = 0.5, f1 = 2, f2 = 1, N = 10: R1 = 0.5*2*(1 - 0.3) = 0.7
        let g = SpaceTimeGrid::new(3, 3, 1.0, 1.0, 1, 1.0).unwrap();
        let p = bare_params(&g, 0.0, 1.31, 10.0);
        let (r1, _, _) = reaction_scalar(2.0, 1.0, 0.5, 0.0, 0.0, 0.0, &p);
        assert!((r1 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn conversion_term_with_unit_exponent() {
        // k = 0.1, alpha = 1, s1 = 1, s2 = 0, f1 = 2, f2 = 1: R = 0.1*2*1 = 0.2
        let g = SpaceTimeGrid::new(3, 3, 1.0, 1.0, 1, 1.0).unwrap();
        let p = bare_params(&g, 0.1, 1.0, 10.0);
        let (_, _, r) = reaction_scalar(2.0, 1.0, 0.0, 0.0, 1.0, 0.0, &p);
        assert!((r - 0.2).abs() < 1e-15);
        let jac = reaction_jacobian_scalar(2.0, 1.0, 0.0, 0.0, 1.0, 0.0, &p);
        assert!((jac.dr_ds1 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn reactions_vanish_at_empty_state() {
        let g = SpaceTimeGrid::new(3, 3, 1.0, 1.0, 1, 1.0).unwrap();
        let p = bare_params(&g, 0.2, 1.31, 10.0);
        let (r1, r2, r) = reaction_scalar(0.0, 0.0, 1.0, 1.0, 0.7, 0.3, &p);
        assert_eq!((r1, r2, r), (0.0, 0.0, 0.0));
    }

    #[test]
    fn truncated_power_clips_negative_arguments() {
        assert_eq!(pow_plus(-0.5, 1.31), 0.0);
        assert_eq!(pow_plus(0.0, 1.31), 0.0);
        assert!((pow_plus(2.0, 1.0) - 2.0).abs() < 1e-15);
        // Regularized slope stays bounded at zero even for alpha < 1.
        assert!(dpow_plus(0.0, 0.5).is_finite());
        assert!(dpow_plus(-1.0, 0.5).is_finite());
    }

    #[test]
    fn jacobian_matches_central_differences_at_random_points() {
        // All ten partials against central differences with h = 1e-6 at 50
        // pseudo-random admissible points; relative error below 1e-6.
        let g = SpaceTimeGrid::new(3, 3, 1.0, 1.0, 1, 1.0).unwrap();
        let p = bare_params(&g, 0.12, 1.31, 10.0);
        let h = 1e-6;
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
        for _ in 0..50 {
            let f1 = 0.2 + 4.0 * next();
            let f2 = 0.2 + 4.0 * next();
            let b1 = 0.1 + 1.5 * next();
            let b2 = 0.1 + 1.5 * next();
            let s1 = 0.1 + 0.8 * next();
            let s2 = 0.1 + 0.8 * next();
            let jac = reaction_jacobian_scalar(f1, f2, b1, b2, s1, s2, &p);
            let eval = |f1: f64, f2: f64, b1: f64, b2: f64, s1: f64, s2: f64| {
                reaction_scalar(f1, f2, b1, b2, s1, s2, &p)
            };
            let fd = |lo: (f64, f64, f64), hi: (f64, f64, f64)| {
                (
                    (hi.0 - lo.0) / (2.0 * h),
                    (hi.1 - lo.1) / (2.0 * h),
                    (hi.2 - lo.2) / (2.0 * h),
                )
            };
            let d_f1 = fd(eval(f1 - h, f2, b1, b2, s1, s2), eval(f1 + h, f2, b1, b2, s1, s2));
            let d_f2 = fd(eval(f1, f2 - h, b1, b2, s1, s2), eval(f1, f2 + h, b1, b2, s1, s2));
            let d_b1 = fd(eval(f1, f2, b1 - h, b2, s1, s2), eval(f1, f2, b1 + h, b2, s1, s2));
            let d_b2 = fd(eval(f1, f2, b1, b2 - h, s1, s2), eval(f1, f2, b1, b2 + h, s1, s2));
            let d_s1 = fd(eval(f1, f2, b1, b2, s1 - h, s2), eval(f1, f2, b1, b2, s1 + h, s2));
            let d_s2 = fd(eval(f1, f2, b1, b2, s1, s2 - h), eval(f1, f2, b1, b2, s1, s2 + h));
            assert!(rel(jac.dr1_df1, d_f1.0) < 1e-6);
            assert!(rel(jac.dr2_df1, d_f1.1) < 1e-6);
            assert!(rel(jac.dr_df1, d_f1.2) < 1e-6);
            assert!(rel(jac.dr1_df2, d_f2.0) < 1e-6);
            assert!(rel(jac.dr2_df2, d_f2.1) < 1e-6);
            assert!(rel(jac.dr_df2, d_f2.2) < 1e-6);
            assert!(rel(jac.dr1_dbeta1, d_b1.0) < 1e-6);
            assert!(rel(jac.dr2_dbeta2, d_b2.1) < 1e-6);
            assert!(rel(jac.dr_ds1, d_s1.2) < 1e-6);
            assert!(rel(jac.dr_ds2, d_s2.2) < 1e-6);
        }
    }

    #[test]
    fn validation_rejects_bad_coefficients() {
        let g = SpaceTimeGrid::new(5, 5, 1.0, 1.0, 2, 1.0).unwrap();
        let mut p = bare_params(&g, 0.1, 1.31, 10.0);
        p.validate(&g).unwrap();
        p.capacity = 0.0;
        assert!(p.validate(&g).is_err());
        p.capacity = 10.0;
        p.alpha = -1.0;
        assert!(p.validate(&g).is_err());
        p.alpha = 1.31;
        p.k = -0.5;
        assert!(p.validate(&g).is_err());
    }

    #[test]
    fn validation_rejects_incompatible_initial_and_boundary_data() {
        let g = SpaceTimeGrid::new(5, 5, 1.0, 1.0, 2, 1.0).unwrap();
        let mut p = bare_params(&g, 0.1, 1.31, 10.0);
        p.fb_1[0].values[[0, 2]] = 2.0;
        let err = p.validate(&g).unwrap_err().to_string();
        assert!(err.contains("t=0"), "unexpected message: {err}");
    }

    #[test]
    fn validation_accepts_interior_mismatch_of_boundary_frames() {
        // Only boundary nodes are consulted for compatibility.
        let g = SpaceTimeGrid::new(5, 5, 1.0, 1.0, 2, 1.0).unwrap();
        let mut p = bare_params(&g, 0.1, 1.31, 10.0);
        p.fb_1[0].values[[2, 2]] = 99.0;
        p.validate(&g).unwrap();
    }
}
