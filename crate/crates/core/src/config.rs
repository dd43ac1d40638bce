//! TOML configuration: schema, defaults, validation, and materialization
//! into solver-ready objects.
//!
//! A config file has required `[grid]` and `[model]` blocks (the latter with
//! a `[model.initial]` sub-block) and optional `[model.advection]`,
//! `[noise]`, `[cost]`, `[bounds]`, `[optimizer]` and `[run]` blocks.
//! Omitted optional keys take documented defaults. Scalar entries broadcast
//! to constant space-time fields. Validation failures name the offending
//! key; non-fatal issues (an advective time step larger than the transport
//! stability estimate) are collected as warnings.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::ensemble::EnsembleMode;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, SpaceTimeGrid};
use crate::model::ModelParams;
use crate::noise::{default_modes, NoiseModes};
use crate::optimizer::{BoundPair, ControlBounds, CostSpec, FbsOptions};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    grid: RawGrid,
    model: RawModel,
    #[serde(default)]
    noise: RawNoise,
    #[serde(default)]
    cost: RawCost,
    #[serde(default)]
    bounds: RawBounds,
    #[serde(default)]
    optimizer: RawOptimizer,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    nt: usize,
    t_final: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    d1: f64,
    d2: f64,
    k: f64,
    alpha: f64,
    capacity: f64,
    #[serde(default)]
    floor_at_zero: bool,
    #[serde(default)]
    advection: RawAdvection,
    initial: RawInitial,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawAdvection {
    /// No transport.
    #[default]
    None,
    /// Rigid rotation about the domain center with angular rate `omega`,
    /// shared by both populations.
    Rotation { omega: f64 },
    /// Constant velocity per population.
    Constant {
        #[serde(default)]
        vx1: f64,
        #[serde(default)]
        vy1: f64,
        #[serde(default)]
        vx2: f64,
        #[serde(default)]
        vy2: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawInitial {
    /// Spatially constant densities.
    Uniform { f1: f64, f2: f64 },
    /// `base + peak * exp(-|x - center|^2 / (2 width^2))` per population.
    Gaussian {
        f1_base: f64,
        f1_peak: f64,
        f1_center: [f64; 2],
        f1_width: f64,
        f2_base: f64,
        f2_peak: f64,
        f2_center: [f64; 2],
        f2_width: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawNoise {
    n_modes: usize,
    amplitude: f64,
}

impl Default for RawNoise {
    fn default() -> Self {
        Self { n_modes: 2, amplitude: 0.1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawCost {
    lambda1: f64,
    lambda2: f64,
    r1: f64,
    r2: f64,
    r3: f64,
    r4: f64,
    b1: f64,
    b2: f64,
}

impl Default for RawCost {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            r1: 1.0,
            r2: 1.0,
            r3: 0.5,
            r4: 0.5,
            b1: 0.5,
            b2: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawBounds {
    beta1: [f64; 2],
    beta2: [f64; 2],
    s1: [f64; 2],
    s2: [f64; 2],
}

impl Default for RawBounds {
    fn default() -> Self {
        Self {
            beta1: [0.0, 2.0],
            beta2: [0.0, 2.0],
            s1: [0.0, 1.0],
            s2: [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawOptimizer {
    damping: f64,
    tol: f64,
    max_iter: usize,
}

impl Default for RawOptimizer {
    fn default() -> Self {
        Self { damping: 0.5, tol: 1e-6, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawRun {
    seed: u64,
    n_paths: usize,
    out_dir: String,
    /// 0 means the library default thread count.
    workers: usize,
    /// Per-path work of the `ensemble` command: "simulate" or "optimize".
    mode: String,
    /// Snapshot times in physical units; default {0, T/2, T}.
    snapshots: Option<Vec<f64>>,
    /// Step sizes probed by `gradient-check`.
    gradient_eps: Vec<f64>,
    /// Pass threshold for `gradient-check`; defaults to 1e-3 without noise
    /// and 1e-2 with.
    gradient_tol: Option<f64>,
    /// Minimum inter-backend error shrink factor per step halving required
    /// by `equivalence-check`.
    ratio_min: f64,
    /// Number of step halvings probed by `equivalence-check`.
    halvings: usize,
    /// Control perturbation sizes probed by `stability-probe`, ascending.
    deltas: Vec<f64>,
    /// Pass threshold on e(2*delta)/e(delta) for the two smallest deltas.
    stability_ratio_max: f64,
    /// Pass threshold on the deviations at the smallest delta.
    stability_tol: f64,
}

impl Default for RawRun {
    fn default() -> Self {
        Self {
            seed: 42,
            n_paths: 1,
            out_dir: "out".into(),
            workers: 0,
            mode: "simulate".into(),
            snapshots: None,
            gradient_eps: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            gradient_tol: None,
            ratio_min: 1.3,
            halvings: 3,
            deltas: vec![0.01, 0.02, 0.04],
            stability_ratio_max: 4.5,
            stability_tol: 0.5,
        }
    }
}

/// Command-level settings from the `[run]` block, resolved.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub seed: u64,
    pub n_paths: usize,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub mode: EnsembleMode,
    pub snapshot_steps: Vec<usize>,
    pub gradient_eps: Vec<f64>,
    pub gradient_tol: f64,
    pub ratio_min: f64,
    pub halvings: usize,
    pub deltas: Vec<f64>,
    pub stability_ratio_max: f64,
    pub stability_tol: f64,
}

/// One fully validated configuration, materialized into solver inputs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    raw: RawConfig,
    pub grid: SpaceTimeGrid,
    pub params: ModelParams,
    pub cost: CostSpec,
    pub bounds: ControlBounds,
    pub options: FbsOptions,
    pub settings: RunSettings,
    pub warnings: Vec<String>,
}

fn key_err(key: &str, reason: impl Into<String>) -> Error {
    Error::ConfigKey { key: key.into(), reason: reason.into() }
}

fn require(ok: bool, key: &str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(key_err(key, reason))
    }
}

fn positive(v: f64, key: &str) -> Result<()> {
    require(v > 0.0 && v.is_finite(), key, format!("must be positive, got {v}"))
}

fn nonnegative(v: f64, key: &str) -> Result<()> {
    require(v >= 0.0 && v.is_finite(), key, format!("must be nonnegative, got {v}"))
}

fn advection_fields(
    spec: &RawAdvection,
    grid: &SpaceTimeGrid,
) -> ((ScalarField, ScalarField), (ScalarField, ScalarField)) {
    match spec {
        RawAdvection::None => {
            let z = ScalarField::zeros(grid);
            ((z.clone(), z.clone()), (z.clone(), z))
        }
        RawAdvection::Rotation { omega } => {
            let (cx, cy) = (0.5 * grid.lx, 0.5 * grid.ly);
            let vx = ScalarField::from_fn(grid, |_, y| -omega * (y - cy));
            let vy = ScalarField::from_fn(grid, |x, _| omega * (x - cx));
            ((vx.clone(), vy.clone()), (vx, vy))
        }
        RawAdvection::Constant { vx1, vy1, vx2, vy2 } => (
            (ScalarField::constant(grid, *vx1), ScalarField::constant(grid, *vy1)),
            (ScalarField::constant(grid, *vx2), ScalarField::constant(grid, *vy2)),
        ),
    }
}

fn gaussian(grid: &SpaceTimeGrid, base: f64, peak: f64, center: [f64; 2], width: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| {
        let d2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
        base + peak * (-d2 / (2.0 * width * width)).exp()
    })
}

fn initial_fields(spec: &RawInitial, grid: &SpaceTimeGrid) -> Result<(ScalarField, ScalarField)> {
    match spec {
        RawInitial::Uniform { f1, f2 } => {
            nonnegative(*f1, "model.initial.f1")?;
            nonnegative(*f2, "model.initial.f2")?;
            Ok((ScalarField::constant(grid, *f1), ScalarField::constant(grid, *f2)))
        }
        RawInitial::Gaussian {
            f1_base,
            f1_peak,
            f1_center,
            f1_width,
            f2_base,
            f2_peak,
            f2_center,
            f2_width,
        } => {
            nonnegative(*f1_base, "model.initial.f1_base")?;
            nonnegative(*f2_base, "model.initial.f2_base")?;
            nonnegative(*f1_peak, "model.initial.f1_peak")?;
            nonnegative(*f2_peak, "model.initial.f2_peak")?;
            positive(*f1_width, "model.initial.f1_width")?;
            positive(*f2_width, "model.initial.f2_width")?;
            Ok((
                gaussian(grid, *f1_base, *f1_peak, *f1_center, *f1_width),
                gaussian(grid, *f2_base, *f2_peak, *f2_center, *f2_width),
            ))
        }
    }
}

fn snapshot_steps(snapshots: &Option<Vec<f64>>, grid: &SpaceTimeGrid) -> Result<Vec<usize>> {
    let times = match snapshots {
        Some(ts) => ts.clone(),
        None => vec![0.0, 0.5 * grid.t_final, grid.t_final],
    };
    let mut steps = Vec::with_capacity(times.len());
    for &t in &times {
        require(
            t.is_finite() && t >= 0.0 && t <= grid.t_final * (1.0 + 1e-12),
            "run.snapshots",
            format!("time {t} outside [0, {}]", grid.t_final),
        )?;
        let k = ((t / grid.dt()).round() as usize).min(grid.nt);
        if !steps.contains(&k) {
            steps.push(k);
        }
    }
    steps.sort_unstable();
    Ok(steps)
}

fn materialize(raw: RawConfig) -> Result<RunConfig> {
    let g = &raw.grid;
    require(g.nx >= 3, "grid.nx", format!("needs at least 3 nodes, got {}", g.nx))?;
    require(g.ny >= 3, "grid.ny", format!("needs at least 3 nodes, got {}", g.ny))?;
    require(g.nt >= 1, "grid.nt", "needs at least one time step")?;
    positive(g.lx, "grid.lx")?;
    positive(g.ly, "grid.ly")?;
    positive(g.t_final, "grid.t_final")?;
    let grid = SpaceTimeGrid::new(g.nx, g.ny, g.lx, g.ly, g.nt, g.t_final)?;

    let m = &raw.model;
    positive(m.d1, "model.d1")?;
    positive(m.d2, "model.d2")?;
    nonnegative(m.k, "model.k")?;
    positive(m.alpha, "model.alpha")?;
    positive(m.capacity, "model.capacity")?;
    if let RawAdvection::Rotation { omega } = m.advection {
        require(omega.is_finite(), "model.advection.omega", "must be finite")?;
    }
    let (vel1, vel2) = advection_fields(&m.advection, &grid);
    let (f0_1, f0_2) = initial_fields(&m.initial, &grid)?;

    require(raw.noise.n_modes >= 1, "noise.n_modes", "needs at least one mode")?;
    nonnegative(raw.noise.amplitude, "noise.amplitude")?;
    let modes = if raw.noise.amplitude == 0.0 {
        NoiseModes::zero(raw.noise.n_modes, &grid)
    } else {
        default_modes(raw.noise.n_modes, raw.noise.amplitude, &grid)
    };

    // Dirichlet data: the trace of the initial fields, held fixed in time.
    let params = ModelParams {
        d1: m.d1,
        d2: m.d2,
        vel1,
        vel2,
        k: m.k,
        alpha: m.alpha,
        capacity: m.capacity,
        modes,
        fb_1: vec![f0_1.clone(); grid.nt + 1],
        fb_2: vec![f0_2.clone(); grid.nt + 1],
        f0_1,
        f0_2,
        floor_at_zero: m.floor_at_zero,
    };
    params.validate(&grid)?;

    let c = &raw.cost;
    nonnegative(c.lambda1, "cost.lambda1")?;
    nonnegative(c.lambda2, "cost.lambda2")?;
    for (v, key) in [
        (c.r1, "cost.r1"),
        (c.r2, "cost.r2"),
        (c.r3, "cost.r3"),
        (c.r4, "cost.r4"),
        (c.b1, "cost.b1"),
        (c.b2, "cost.b2"),
    ] {
        require(v.is_finite(), key, "must be finite")?;
    }
    let cost = CostSpec::constant(
        &grid,
        (c.lambda1, c.lambda2),
        [c.r1, c.r2, c.r3, c.r4],
        [c.b1, c.b2],
    );

    let b = &raw.bounds;
    for (pair, key) in [
        (b.beta1, "bounds.beta1"),
        (b.beta2, "bounds.beta2"),
        (b.s1, "bounds.s1"),
        (b.s2, "bounds.s2"),
    ] {
        require(
            pair[0].is_finite() && pair[1].is_finite() && pair[0] <= pair[1],
            key,
            format!("needs lower <= upper, got [{}, {}]", pair[0], pair[1]),
        )?;
    }
    let bounds = ControlBounds {
        beta1: BoundPair::constant(&grid, b.beta1[0], b.beta1[1]),
        beta2: BoundPair::constant(&grid, b.beta2[0], b.beta2[1]),
        s1: BoundPair::constant(&grid, b.s1[0], b.s1[1]),
        s2: BoundPair::constant(&grid, b.s2[0], b.s2[1]),
    };

    let o = &raw.optimizer;
    require(
        o.damping > 0.0 && o.damping <= 1.0,
        "optimizer.damping",
        format!("must lie in (0, 1], got {}", o.damping),
    )?;
    positive(o.tol, "optimizer.tol")?;
    require(o.max_iter >= 1, "optimizer.max_iter", "needs at least one sweep")?;
    let options = FbsOptions { damping: o.damping, tol: o.tol, max_iter: o.max_iter };

    let r = &raw.run;
    require(r.n_paths >= 1, "run.n_paths", "needs at least one path")?;
    let mode = match r.mode.as_str() {
        "simulate" => EnsembleMode::Simulate,
        "optimize" => EnsembleMode::Optimize,
        other => {
            return Err(key_err(
                "run.mode",
                format!("expected \"simulate\" or \"optimize\", got \"{other}\""),
            ))
        }
    };
    require(!r.gradient_eps.is_empty(), "run.gradient_eps", "needs at least one step size")?;
    for &e in &r.gradient_eps {
        positive(e, "run.gradient_eps")?;
    }
    let gradient_tol = match r.gradient_tol {
        Some(t) => {
            positive(t, "run.gradient_tol")?;
            t
        }
        None if raw.noise.amplitude == 0.0 => 1e-3,
        None => 1e-2,
    };
    positive(r.ratio_min, "run.ratio_min")?;
    require(r.halvings >= 1, "run.halvings", "needs at least one halving")?;
    require(!r.deltas.is_empty(), "run.deltas", "needs at least one probe size")?;
    for w in r.deltas.windows(2) {
        require(w[0] < w[1], "run.deltas", "must be strictly ascending")?;
    }
    for &d in &r.deltas {
        nonnegative(d, "run.deltas")?;
    }
    positive(r.stability_ratio_max, "run.stability_ratio_max")?;
    positive(r.stability_tol, "run.stability_tol")?;
    let settings = RunSettings {
        seed: r.seed,
        n_paths: r.n_paths,
        out_dir: PathBuf::from(&r.out_dir),
        workers: r.workers,
        mode,
        snapshot_steps: snapshot_steps(&r.snapshots, &grid)?,
        gradient_eps: r.gradient_eps.clone(),
        gradient_tol,
        ratio_min: r.ratio_min,
        halvings: r.halvings,
        deltas: r.deltas.clone(),
        stability_ratio_max: r.stability_ratio_max,
        stability_tol: r.stability_tol,
    };

    let mut warnings = Vec::new();
    let speed_x = params.vel1.0.max_abs().max(params.vel2.0.max_abs());
    let speed_y = params.vel1.1.max_abs().max(params.vel2.1.max_abs());
    let mut budget = f64::INFINITY;
    if speed_x > 0.0 {
        budget = budget.min(grid.dx() / speed_x);
    }
    if speed_y > 0.0 {
        budget = budget.min(grid.dy() / speed_y);
    }
    if grid.dt() > 0.25 * budget {
        warnings.push(format!(
            "time step {:.3e} exceeds a quarter of the transport stability estimate {:.3e}; \
             expect advection error or instability",
            grid.dt(),
            budget
        ));
    }

    Ok(RunConfig { raw, grid, params, cost, bounds, options, settings, warnings })
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        materialize(raw)
    }

    /// Rebuilds the same configuration with a different step count. Snapshot
    /// times and all physical data are re-derived on the new grid.
    pub fn with_nt(&self, nt: usize) -> Result<Self> {
        let mut raw = self.raw.clone();
        raw.grid.nt = nt;
        materialize(raw)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [grid]
        nx = 9
        ny = 9
        lx = 1.0
        ly = 1.0
        nt = 20
        t_final = 0.1

        [model]
        d1 = 0.02
        d2 = 0.015
        k = 0.3
        alpha = 1.2
        capacity = 10.0

        [model.initial]
        kind = "uniform"
        f1 = 1.0
        f2 = 0.5
    "#;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.options.damping, 0.5);
        assert_eq!(cfg.options.tol, 1e-6);
        assert_eq!(cfg.options.max_iter, 500);
        assert_eq!(cfg.settings.seed, 42);
        assert_eq!(cfg.settings.n_paths, 1);
        assert_eq!(cfg.settings.mode, EnsembleMode::Simulate);
        assert_eq!(cfg.settings.snapshot_steps, vec![0, 10, 20]);
        assert_eq!(cfg.settings.gradient_tol, 1e-2);
        assert_eq!(cfg.params.modes.n_modes(), 2);
        assert!(cfg.warnings.is_empty());
        // Velocity defaults to zero.
        assert_eq!(cfg.params.vel1.0.max_abs(), 0.0);
        assert_eq!(cfg.params.vel2.1.max_abs(), 0.0);
    }

    #[test]
    fn zero_capacity_error_names_the_key() {
        let text = MINIMAL.replace("capacity = 10.0", "capacity = 0.0");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("model.capacity"), "got: {err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[optimizer]\ndampening = 0.7\n");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("dampening"), "got: {err}");
    }

    #[test]
    fn inverted_bounds_error_names_the_key() {
        let text = format!("{MINIMAL}\n[bounds]\ns1 = [0.9, 0.1]\n");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("bounds.s1"), "got: {err}");
    }

    #[test]
    fn gradient_tolerance_defaults_follow_the_noise_level() {
        let text = format!("{MINIMAL}\n[noise]\nn_modes = 2\namplitude = 0.0\n");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.settings.gradient_tol, 1e-3);
        assert_eq!(cfg.params.modes.h1[0].max_abs(), 0.0);
    }

    #[test]
    fn rotation_advection_is_divergence_free_and_warned_when_too_fast() {
        let text = format!(
            "{MINIMAL}\n[model.advection]\nkind = \"rotation\"\nomega = 40.0\n"
        );
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.warnings.len(), 1);
        // Center node is stationary under a rigid rotation.
        let mid = 4;
        assert!(cfg.params.vel1.0.values[[mid, mid]].abs() < 1e-12);
        assert!(cfg.params.vel1.1.values[[mid, mid]].abs() < 1e-12);
    }

    #[test]
    fn rebuilding_with_a_new_step_count_keeps_physics_and_rescales_frames() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let fine = cfg.with_nt(40).unwrap();
        assert_eq!(fine.grid.nt, 40);
        assert_eq!(fine.grid.t_final, cfg.grid.t_final);
        assert_eq!(fine.cost.r1.len(), 41);
        assert_eq!(fine.params.fb_1.len(), 41);
        assert_eq!(fine.params.d1, cfg.params.d1);
    }

    #[test]
    fn gaussian_initial_data_peaks_at_the_center() {
        let text = MINIMAL.replace(
            "kind = \"uniform\"\n        f1 = 1.0\n        f2 = 0.5",
            "kind = \"gaussian\"\n        f1_base = 0.2\n        f1_peak = 1.0\n        f1_center = [0.5, 0.5]\n        f1_width = 0.2\n        f2_base = 0.1\n        f2_peak = 0.8\n        f2_center = [0.5, 0.5]\n        f2_width = 0.2",
        );
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let f = &cfg.params.f0_1;
        assert!((f.values[[4, 4]] - 1.2).abs() < 1e-12);
        assert!(f.values[[0, 0]] < f.values[[4, 4]]);
    }
}
