//! The annealed alternating solver: Sinkhorn solves against the cost induced
//! by the current map, a closed-form spectral update solves for the map given
//! the coupling, and λ decays geometrically between iterations.
//!
//! Neither block problem is jointly concave with the other's variable free,
//! but strong entropic regularization makes the landscape benign; starting at
//! λ0 and annealing toward λ_min replaces ad-hoc initialization. Convergence
//! is judged on the unregularized transport cost, and only once λ has reached
//! its floor: while λ is still moving the objective changes because the
//! problem does.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_inner, sym_inv_sqrt};
use crate::model::{Coupling, InvarianceBall, LinearMap, PointSet, SchattenOrder};
use crate::procrustes::{optimal_map_in_ball, random_feasible_map};
use crate::sinkhorn::{entropy, pairwise_sq_dist, sinkhorn_warm, transport_cost, SinkhornSettings};

/// Whiteness residual allowed when a solve runs in [`Enforcement::Whitened`]
/// mode; [`whiten_pointset`] outputs sit far below this.
pub const WHITENESS_ENFORCE_TOL: f64 = 1e-6;

/// Which simplifying precondition the solve relies on: either every map in
/// the family preserves angles (the spectral ball at radius 1, whose optima
/// are orthogonal), or the mapped-side point set has been whitened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enforcement {
    AnglePreserving,
    Whitened,
}

/// Configuration of one alternating solve.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub ball: InvarianceBall,
    /// Initial entropy regularization; every experiment in this crate runs
    /// from 1.0 on unit-scale data.
    pub lambda0: f64,
    /// Geometric decay factor applied after each outer iteration.
    pub decay: f64,
    /// Floor of the annealing schedule.
    pub lambda_min: f64,
    pub outer_max_iters: usize,
    /// Relative change of the transport cost below which the solve stops
    /// (checked only once λ has reached `lambda_min`).
    pub outer_tol: f64,
    /// Inner-solver controls; the `lambda` field is overridden by the
    /// schedule each iteration.
    pub sinkhorn: SinkhornSettings,
    pub seed: u64,
    pub enforcement: Enforcement,
}

impl SolverConfig {
    /// Defaults: λ0 = 1, decay 0.95, λ_min = 1e-3, at most 300 outer
    /// iterations, relative tolerance 1e-6. Enforcement defaults to
    /// angle-preserving for the spectral ball and whitened otherwise.
    pub fn new(ball: InvarianceBall) -> Self {
        let enforcement = if ball.order().is_infinite() {
            Enforcement::AnglePreserving
        } else {
            Enforcement::Whitened
        };
        SolverConfig {
            ball,
            lambda0: 1.0,
            decay: 0.95,
            lambda_min: 1e-3,
            outer_max_iters: 300,
            outer_tol: 1e-6,
            sinkhorn: SinkhornSettings {
                lambda: 1.0,
                max_inner_iters: 1000,
                marginal_tol: 1e-6,
            },
            seed: 0,
            enforcement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(Error::invalid("lambda0 must be positive"));
        }
        if !(self.lambda_min.is_finite() && self.lambda_min > 0.0) {
            return Err(Error::invalid("lambda_min must be positive"));
        }
        if self.lambda_min > self.lambda0 {
            return Err(Error::invalid(format!(
                "lambda_min {} exceeds lambda0 {}",
                self.lambda_min, self.lambda0
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::invalid(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if self.outer_max_iters == 0 {
            return Err(Error::invalid("outer_max_iters must be >= 1"));
        }
        if !(self.outer_tol.is_finite() && self.outer_tol > 0.0) {
            return Err(Error::invalid("outer_tol must be positive"));
        }
        let mut s = self.sinkhorn;
        s.lambda = self.lambda0;
        s.validate()
    }
}

/// One outer iteration of the solve, as recorded in the trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Regularization used for this iteration's Sinkhorn solve.
    pub lambda: f64,
    /// Unregularized transport cost `⟨Γ, C_P⟩` (cost built from the map the
    /// coupling was solved against).
    pub objective: f64,
    /// `⟨Γ, XᵀPY⟩ + λ H(Γ)` at the same iterate pair.
    pub regularized_objective: f64,
    /// Frobenius norm of the map update this iteration.
    pub delta_map: f64,
    /// Frobenius norm of the coupling change; NaN on the first iteration.
    pub delta_coupling: f64,
    pub sinkhorn_sweeps: usize,
    pub sinkhorn_converged: bool,
}

/// Per-iteration history of a solve.
#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
}

/// Final iterates of a solve plus the trace that produced them.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub coupling: Coupling,
    pub map: LinearMap,
    pub trace: SolveTrace,
    pub converged: bool,
}

/// Whiteness report: `residual = ‖Y diag(q)² Yᵀ - I‖_F`.
#[derive(Debug, Clone, Copy)]
pub struct WhitenessReport {
    pub ok: bool,
    pub residual: f64,
}

/// Checks `Y diag(q)² Yᵀ = I` within `tol` in Frobenius norm.
pub fn whiteness_check(y: &PointSet, tol: f64) -> WhitenessReport {
    let residual = (second_moment(y) - DMatrix::<f64>::identity(y.dim(), y.dim())).norm();
    WhitenessReport {
        ok: residual <= tol,
        residual,
    }
}

fn second_moment(y: &PointSet) -> DMatrix<f64> {
    let q = y.weights().as_vector();
    let weighted = DMatrix::from_fn(y.dim(), y.len(), |r, c| y.data()[(r, c)] * q[c]);
    &weighted * weighted.transpose()
}

/// Returns `Y' = S^(-1/2) Y` with `S = Y diag(q)² Yᵀ`, so the output passes
/// [`whiteness_check`] at 1e-8. Fails when S is rank-deficient (smallest
/// eigenvalue below 1e-12 of the largest).
pub fn whiten_pointset(y: &PointSet) -> Result<PointSet> {
    let s = second_moment(y);
    let inv_sqrt = sym_inv_sqrt(&s, 1e-12)?;
    PointSet::new(inv_sqrt * y.data(), y.weights().clone())
}

/// The entropic objective `⟨Γ, XᵀPY⟩ + λ H(Γ)` the annealing maximizes.
pub fn regularized_objective(
    x: &PointSet,
    y: &PointSet,
    gamma: &Coupling,
    map: &LinearMap,
    lambda: f64,
) -> Result<f64> {
    let cross = cross_covariance(x, y, gamma)?;
    if map.dim() != x.dim() {
        return Err(Error::dims(format!(
            "map has dimension {} but points have dimension {}",
            map.dim(),
            x.dim()
        )));
    }
    Ok(frobenius_inner(&cross, map.matrix()) + lambda * entropy(gamma))
}

/// Nuclear norm of `X Γ Yᵀ`: for the spectral ball at radius 1 this equals
/// `max_P ⟨XΓYᵀ, P⟩` by duality, making it a map-free diagnostic of p = ∞
/// runs.
pub fn nuclear_objective(x: &PointSet, y: &PointSet, gamma: &Coupling) -> Result<f64> {
    let cross = cross_covariance(x, y, gamma)?;
    crate::model::schatten_norm(&cross, SchattenOrder::one())
}

/// `X Γ Yᵀ`, the coupling-weighted cross-covariance the map update consumes.
fn cross_covariance(x: &PointSet, y: &PointSet, gamma: &Coupling) -> Result<DMatrix<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::dims(format!(
            "point dimensions differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    if x.len() != gamma.nrows() || y.len() != gamma.ncols() {
        return Err(Error::dims(format!(
            "coupling is {}x{} but point sets have {} and {} columns",
            gamma.nrows(),
            gamma.ncols(),
            x.len(),
            y.len()
        )));
    }
    Ok((x.data() * gamma.gamma()) * y.data().transpose())
}

/// Runs the annealed alternating solve from a random feasible map.
pub fn solve(x: &PointSet, y: &PointSet, cfg: &SolverConfig) -> Result<AlignmentResult> {
    solve_inner(x, y, cfg, None, &mut |_| {})
}

/// As [`solve`], invoking `observer` after every outer iteration (the CLI
/// streams trace rows through this).
pub fn solve_with_observer(
    x: &PointSet,
    y: &PointSet,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&TraceRecord),
) -> Result<AlignmentResult> {
    solve_inner(x, y, cfg, None, observer)
}

/// As [`solve`] but starting from a caller-provided feasible map instead of
/// a random draw; the scaled two-stage pipeline seeds stage two this way.
pub fn solve_from(
    x: &PointSet,
    y: &PointSet,
    cfg: &SolverConfig,
    initial_map: &LinearMap,
    observer: &mut dyn FnMut(&TraceRecord),
) -> Result<AlignmentResult> {
    solve_inner(x, y, cfg, Some(initial_map), observer)
}

/// Runs `restarts` independent solves (seeds `cfg.seed`, `cfg.seed + 1`, ...)
/// in parallel and keeps the one with the lowest final transport cost. The
/// selection criterion is fully unsupervised, so this is a legitimate way to
/// shed the local optima a single annealed run can land in on hard synthetic
/// instances.
pub fn solve_best_of(
    x: &PointSet,
    y: &PointSet,
    cfg: &SolverConfig,
    restarts: usize,
) -> Result<AlignmentResult> {
    use rayon::prelude::*;
    if restarts == 0 {
        return Err(Error::invalid("restarts must be >= 1"));
    }
    let runs: Vec<Result<AlignmentResult>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut local = cfg.clone();
            local.seed = cfg.seed.wrapping_add(r as u64);
            solve(x, y, &local)
        })
        .collect();
    let mut best: Option<AlignmentResult> = None;
    for run in runs {
        let run = run?;
        let cost = run
            .trace
            .records
            .last()
            .map(|rec| rec.objective)
            .unwrap_or(f64::INFINITY);
        let current = best
            .as_ref()
            .and_then(|b| b.trace.records.last().map(|rec| rec.objective))
            .unwrap_or(f64::INFINITY);
        if cost < current {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1 guarantees a candidate"))
}

fn solve_inner(
    x: &PointSet,
    y: &PointSet,
    cfg: &SolverConfig,
    initial_map: Option<&LinearMap>,
    observer: &mut dyn FnMut(&TraceRecord),
) -> Result<AlignmentResult> {
    cfg.validate()?;
    let d = x.dim();
    if y.dim() != d {
        return Err(Error::dims(format!(
            "point dimensions differ: {d} vs {}",
            y.dim()
        )));
    }
    if cfg.ball.dim() != d {
        return Err(Error::dims(format!(
            "ball has dimension {} but points have dimension {d}",
            cfg.ball.dim()
        )));
    }
    if cfg.enforcement == Enforcement::Whitened {
        let report = whiteness_check(y, WHITENESS_ENFORCE_TOL);
        if !report.ok {
            return Err(Error::invalid(format!(
                "whitened enforcement requires Y diag(q)^2 Y^T = I; residual {:.3e} \
                 exceeds {WHITENESS_ENFORCE_TOL:.1e} (whiten the point set first)",
                report.residual
            )));
        }
    }

    let mut map = match initial_map {
        Some(m) => {
            if m.dim() != d {
                return Err(Error::dims(format!(
                    "initial map has dimension {} but points have dimension {d}",
                    m.dim()
                )));
            }
            m.clone()
        }
        None => random_feasible_map(d, &cfg.ball, cfg.seed)?,
    };

    let mut lambda = cfg.lambda0;
    let mut warm: Option<DVector<f64>> = None;
    let mut previous_gamma: Option<DMatrix<f64>> = None;
    let mut best: Option<(Coupling, LinearMap)> = None;
    let mut prev_objective_at_floor: Option<f64> = None;
    let mut trace = SolveTrace::default();
    let mut converged = false;

    for iteration in 0..cfg.outer_max_iters {
        let mapped = map.matrix() * y.data();
        let cost = pairwise_sq_dist(x.data(), &mapped)?;
        let mut settings = cfg.sinkhorn;
        settings.lambda = lambda;
        let (run, potential) =
            sinkhorn_warm(&cost, x.weights(), y.weights(), &settings, warm.as_ref()).map_err(
                |e| match e {
                    Error::NumericalFailure(msg) => {
                        Error::numerical(format!("outer iteration {iteration}: {msg}"))
                    }
                    other => other,
                },
            )?;
        warm = Some(potential);

        let gamma = run.coupling;
        let cross = (x.data() * gamma.gamma()) * y.data().transpose();
        let solution = optimal_map_in_ball(&cross, &cfg.ball)?;

        let objective = transport_cost(&gamma, &cost)?;
        let regularized =
            frobenius_inner(&cross, map.matrix()) + lambda * entropy(&gamma);
        let delta_map = (solution.map.matrix() - map.matrix()).norm();
        let delta_coupling = previous_gamma
            .as_ref()
            .map(|prev| (gamma.gamma() - prev).norm())
            .unwrap_or(f64::NAN);

        let record = TraceRecord {
            iteration,
            lambda,
            objective,
            regularized_objective: regularized,
            delta_map,
            delta_coupling,
            sinkhorn_sweeps: run.sweeps,
            sinkhorn_converged: run.converged,
        };
        observer(&record);
        trace.records.push(record);

        previous_gamma = Some(gamma.gamma().clone());
        map = solution.map;
        best = Some((gamma, map.clone()));

        if lambda == cfg.lambda_min {
            if let Some(prev) = prev_objective_at_floor {
                let rel = (objective - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
                if rel < cfg.outer_tol {
                    converged = true;
                    break;
                }
            }
            prev_objective_at_floor = Some(objective);
        }
        lambda = (lambda * cfg.decay).max(cfg.lambda_min);
    }

    let (coupling, map) = best.expect("outer_max_iters >= 1 guarantees one iteration");
    Ok(AlignmentResult {
        coupling,
        map,
        trace,
        converged,
    })
}
