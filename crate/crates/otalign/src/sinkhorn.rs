//! Entropic discrete optimal transport: cost matrices, Sinkhorn-Knopp
//! scaling and objective evaluation.
//!
//! The solver runs plain matrix scaling while the kernel `exp(-C/λ)` is
//! representable and switches to log-domain updates as soon as any entry
//! would underflow, so annealing schedules can drive λ to sharp values
//! without breaking down.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Coupling, Histogram};

/// Kernel entries below this threshold trigger log-domain scaling.
pub const KERNEL_UNDERFLOW: f64 = 1e-300;

/// `exp` arguments this far below the row maximum are dropped from
/// log-sum-exp accumulation; the skipped mass is < 1e-17 relative.
const LSE_CUTOFF: f64 = -40.0;

/// Matrices smaller than this run the log-domain passes serially; task
/// dispatch overhead swamps the arithmetic on tiny problems.
const PARALLEL_MIN_CELLS: usize = 1 << 13;

fn maybe_par_fill<F>(out: &mut [f64], parallel: bool, f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if parallel {
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    } else {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }
}

fn maybe_par_max<F>(len: usize, parallel: bool, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if parallel {
        (0..len).into_par_iter().map(f).reduce(|| f64::MIN, f64::max)
    } else {
        (0..len).map(f).fold(f64::MIN, f64::max)
    }
}

/// How the entries of a cost matrix were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// `C_ij = ‖x_i - y_j‖²`; entries are nonnegative.
    SquaredEuclidean,
    /// `C_ij = -⟨x_i, y_j⟩`; sign-indefinite similarity costs.
    NegativeInner,
}

/// A dense `n x m` transport cost matrix.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    cost: DMatrix<f64>,
    kind: CostKind,
}

impl CostMatrix {
    pub fn new(cost: DMatrix<f64>, kind: CostKind) -> Result<Self> {
        if !cost.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("cost matrix contains non-finite entries"));
        }
        if kind == CostKind::SquaredEuclidean && cost.iter().any(|&c| c < 0.0) {
            return Err(Error::invalid(
                "squared-Euclidean cost matrix has a negative entry",
            ));
        }
        Ok(CostMatrix { cost, kind })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.cost
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn nrows(&self) -> usize {
        self.cost.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.cost.ncols()
    }
}

/// Controls for one Sinkhorn solve. `lambda` is the entropy-regularization
/// strength in the kernel `K = exp(-C/λ)`: larger λ, smoother coupling.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornSettings {
    pub lambda: f64,
    pub max_inner_iters: usize,
    pub marginal_tol: f64,
}

impl SinkhornSettings {
    /// Internal stopping target: a hair below the advertised tolerance so
    /// the returned coupling still validates after the residual is recomputed
    /// from realized entries (summation order and truncation differ at the
    /// 1e-17 level).
    pub(crate) fn stop_residual(&self) -> f64 {
        self.marginal_tol * 0.999
    }

    pub fn new(lambda: f64) -> Result<Self> {
        let s = SinkhornSettings {
            lambda,
            max_inner_iters: 1000,
            marginal_tol: 1e-6,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if self.max_inner_iters < 1 {
            return Err(Error::invalid("max_inner_iters must be >= 1"));
        }
        if !(self.marginal_tol.is_finite() && self.marginal_tol > 0.0) {
            return Err(Error::invalid("marginal_tol must be positive"));
        }
        Ok(())
    }
}

/// Outcome of a Sinkhorn solve. `converged` is false when the sweep cap was
/// reached before the marginal residual dropped below tolerance; the
/// coupling is still returned, validated at its achieved residual.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    pub converged: bool,
    pub sweeps: usize,
    pub residual: f64,
}

/// Pairwise squared Euclidean distances between the columns of `x` (d x n)
/// and `y` (d x m), computed from the inner-product expansion with tiny
/// negative round-off clamped to zero.
pub fn pairwise_sq_dist(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<CostMatrix> {
    if x.nrows() != y.nrows() {
        return Err(Error::dims(format!(
            "point dimensions differ: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let sq_x: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
    let sq_y: Vec<f64> = y.column_iter().map(|c| c.norm_squared()).collect();
    let mut cross = x.tr_mul(y); // n x m
    for j in 0..cross.ncols() {
        for i in 0..cross.nrows() {
            let c = sq_x[i] + sq_y[j] - 2.0 * cross[(i, j)];
            cross[(i, j)] = c.max(0.0);
        }
    }
    CostMatrix::new(cross, CostKind::SquaredEuclidean)
}

/// Entropy `H(Γ) = -Σ Γ_ij (log Γ_ij - 1)`, with `0 log 0 = 0`. This is the
/// convention under which the entropic optimizer is exactly
/// `diag(u) exp(-C/λ) diag(v)`.
pub fn entropy(gamma: &Coupling) -> f64 {
    entropy_of(gamma.gamma())
}

pub(crate) fn entropy_of(gamma: &DMatrix<f64>) -> f64 {
    -gamma
        .iter()
        .map(|&g| if g > 0.0 { g * (g.ln() - 1.0) } else { 0.0 })
        .sum::<f64>()
}

/// Frobenius inner product `⟨Γ, C⟩`: the unregularized transport cost.
pub fn transport_cost(gamma: &Coupling, cost: &CostMatrix) -> Result<f64> {
    if gamma.nrows() != cost.nrows() || gamma.ncols() != cost.ncols() {
        return Err(Error::dims(format!(
            "coupling is {}x{} but cost is {}x{}",
            gamma.nrows(),
            gamma.ncols(),
            cost.nrows(),
            cost.ncols()
        )));
    }
    Ok(gamma
        .gamma()
        .iter()
        .zip(cost.matrix().iter())
        .map(|(g, c)| g * c)
        .sum())
}

/// Entropic OT via Sinkhorn scaling: returns `Γ = diag(a) exp(-C/λ) diag(b)`
/// with both marginal residuals at most `marginal_tol` in max-norm, or a
/// result flagged non-converged if the sweep cap ran out first.
pub fn sinkhorn_solve(
    cost: &CostMatrix,
    p: &Histogram,
    q: &Histogram,
    settings: &SinkhornSettings,
) -> Result<SinkhornResult> {
    let (run, _) = sinkhorn_core(cost, p, q, settings, None, false)?;
    Ok(run)
}

/// As [`sinkhorn_solve`], but also returns the per-sweep values of the dual
/// objective `⟨p,f⟩ + ⟨q,g⟩ - λ·mass(Γ)`. Each half-update maximizes the
/// dual exactly in one block, so this sequence is non-decreasing; useful for
/// convergence diagnostics.
pub fn sinkhorn_solve_with_duals(
    cost: &CostMatrix,
    p: &Histogram,
    q: &Histogram,
    settings: &SinkhornSettings,
) -> Result<(SinkhornResult, Vec<f64>)> {
    let (run, duals) = sinkhorn_core(cost, p, q, settings, None, true)?;
    Ok((run, duals.unwrap_or_default()))
}

/// Warm-startable entry point used by the outer alternating solver: the
/// column potential from the previous solve seeds the next one.
pub(crate) fn sinkhorn_warm(
    cost: &CostMatrix,
    p: &Histogram,
    q: &Histogram,
    settings: &SinkhornSettings,
    warm_col_potential: Option<&DVector<f64>>,
) -> Result<(SinkhornResult, DVector<f64>)> {
    let (run, _) = sinkhorn_raw(cost, p, q, settings, warm_col_potential, false)?;
    let g = run.col_potential.clone();
    Ok((run.into(), g))
}

struct CoreRun {
    coupling: Coupling,
    converged: bool,
    sweeps: usize,
    residual: f64,
    col_potential: DVector<f64>,
}

impl From<CoreRun> for SinkhornResult {
    fn from(run: CoreRun) -> Self {
        SinkhornResult {
            coupling: run.coupling,
            converged: run.converged,
            sweeps: run.sweeps,
            residual: run.residual,
        }
    }
}

fn sinkhorn_core(
    cost: &CostMatrix,
    p: &Histogram,
    q: &Histogram,
    settings: &SinkhornSettings,
    warm_col_potential: Option<&DVector<f64>>,
    record_duals: bool,
) -> Result<(SinkhornResult, Option<Vec<f64>>)> {
    let (run, duals) = sinkhorn_raw(cost, p, q, settings, warm_col_potential, record_duals)?;
    Ok((run.into(), duals))
}

fn sinkhorn_raw(
    cost: &CostMatrix,
    p: &Histogram,
    q: &Histogram,
    settings: &SinkhornSettings,
    warm_col_potential: Option<&DVector<f64>>,
    record_duals: bool,
) -> Result<DomainOutcome> {
    settings.validate()?;
    let c = cost.matrix();
    if c.nrows() != p.len() || c.ncols() != q.len() {
        return Err(Error::dims(format!(
            "cost is {}x{} but marginals have lengths {} and {}",
            c.nrows(),
            c.ncols(),
            p.len(),
            q.len()
        )));
    }

    let max_cost = c.iter().cloned().fold(f64::MIN, f64::max);
    // exp(-max_cost/λ) < KERNEL_UNDERFLOW  <=>  max_cost/λ > -ln(KERNEL_UNDERFLOW)
    let needs_log_domain = max_cost / settings.lambda > -KERNEL_UNDERFLOW.ln();

    if needs_log_domain {
        log_domain_sinkhorn(c, p, q, settings, warm_col_potential, record_duals)
    } else {
        match plain_sinkhorn(c, p, q, settings, warm_col_potential, record_duals)? {
            Some(run) => Ok(run),
            // Scaling broke down mid-run (denominator underflow); stabilize.
            None => log_domain_sinkhorn(c, p, q, settings, warm_col_potential, record_duals),
        }
    }
}

type DomainOutcome = (CoreRun, Option<Vec<f64>>);

fn plain_sinkhorn(
    c: &DMatrix<f64>,
    p: &Histogram,
    q: &Histogram,
    settings: &SinkhornSettings,
    warm_col_potential: Option<&DVector<f64>>,
    record_duals: bool,
) -> Result<Option<DomainOutcome>> {
    let (n, m) = c.shape();
    let lambda = settings.lambda;
    let kernel = c.map(|v| (-v / lambda).exp());
    let pv = p.as_vector();
    let qv = q.as_vector();

    let mut b = match warm_col_potential {
        Some(g) => {
            let b = g.map(|gj| (gj / lambda).exp());
            if b.iter().all(|x| x.is_finite()) {
                b
            } else {
                DVector::from_element(m, 1.0)
            }
        }
        None => DVector::from_element(m, 1.0),
    };
    let mut a = DVector::<f64>::zeros(n);
    let mut kb = DVector::<f64>::zeros(n);
    let mut kta = DVector::<f64>::zeros(m);
    kb.gemv(1.0, &kernel, &b, 0.0);

    let mut duals: Option<Vec<f64>> = if record_duals { Some(Vec::new()) } else { None };
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < settings.max_inner_iters {
        for i in 0..n {
            a[i] = if pv[i] > 0.0 { pv[i] / kb[i] } else { 0.0 };
        }
        if !a.iter().all(|x| x.is_finite()) {
            return Ok(None);
        }
        kta.gemv_tr(1.0, &kernel, &a, 0.0);
        for j in 0..m {
            b[j] = if qv[j] > 0.0 { qv[j] / kta[j] } else { 0.0 };
        }
        if !b.iter().all(|x| x.is_finite()) {
            return Ok(None);
        }
        kb.gemv(1.0, &kernel, &b, 0.0);
        sweeps += 1;

        residual = (0..n)
            .map(|i| (a[i] * kb[i] - pv[i]).abs())
            .fold(0.0, f64::max);
        if let Some(d) = duals.as_mut() {
            let mass: f64 = (0..n).map(|i| a[i] * kb[i]).sum();
            let fp: f64 = (0..n)
                .filter(|&i| pv[i] > 0.0)
                .map(|i| pv[i] * lambda * a[i].ln())
                .sum();
            let gq: f64 = (0..m)
                .filter(|&j| qv[j] > 0.0)
                .map(|j| qv[j] * lambda * b[j].ln())
                .sum();
            d.push(fp + gq - lambda * mass);
        }
        if residual <= settings.stop_residual() {
            converged = true;
            break;
        }
    }

    // Columns are exact (b was computed last); rows carry `residual`.
    let mut gamma = kernel;
    for j in 0..m {
        for i in 0..n {
            gamma[(i, j)] *= a[i] * b[j];
        }
    }
    let col_potential = DVector::from_fn(m, |j, _| {
        if b[j] > 0.0 {
            lambda * b[j].ln()
        } else {
            f64::NEG_INFINITY
        }
    });
    let tol = effective_tol(settings.marginal_tol, residual, converged);
    let coupling = Coupling::with_tolerance(gamma, p.clone(), q.clone(), tol)?;
    Ok(Some((
        CoreRun {
            coupling,
            converged,
            sweeps,
            residual,
            col_potential,
        },
        duals,
    )))
}

fn log_domain_sinkhorn(
    c: &DMatrix<f64>,
    p: &Histogram,
    q: &Histogram,
    settings: &SinkhornSettings,
    warm_col_potential: Option<&DVector<f64>>,
    record_duals: bool,
) -> Result<DomainOutcome> {
    let (n, m) = c.shape();
    let lambda = settings.lambda;
    let pv = p.as_vector();
    let qv = q.as_vector();
    let log_p: Vec<f64> = pv.iter().map(|&x| x.ln()).collect();
    let log_q: Vec<f64> = qv.iter().map(|&x| x.ln()).collect();

    // Row scans need contiguous rows; keep the transpose alongside.
    let ct = c.transpose();
    let c_cols = c.as_slice();
    let ct_cols = ct.as_slice();

    let mut f = vec![0.0f64; n];
    let mut g = match warm_col_potential {
        Some(w) if w.len() == m => w.iter().cloned().collect::<Vec<f64>>(),
        _ => vec![0.0f64; m],
    };

    let mut duals: Option<Vec<f64>> = if record_duals { Some(Vec::new()) } else { None };
    let parallel = n * m >= PARALLEL_MIN_CELLS;
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < settings.max_inner_iters {
        // f_i <- λ log p_i - λ lse_j (g_j - C_ij)/λ. NaN marks a row whose
        // kernel mass vanished entirely.
        {
            let g_ref = &g;
            maybe_par_fill(&mut f, parallel, |i| {
                if pv[i] == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let row = &ct_cols[i * m..(i + 1) * m];
                match lse_shifted(row, g_ref, lambda) {
                    Some(v) => lambda * log_p[i] - lambda * v,
                    None => f64::NAN,
                }
            });
        }
        if let Some(i) = f.iter().position(|x| x.is_nan()) {
            return Err(Error::numerical(format!(
                "kernel row {i} is entirely zero after log-domain stabilization"
            )));
        }

        // g_j <- λ log q_j - λ lse_i (f_i - C_ij)/λ
        {
            let f_ref = &f;
            maybe_par_fill(&mut g, parallel, |j| {
                if qv[j] == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let col = &c_cols[j * n..(j + 1) * n];
                match lse_shifted(col, f_ref, lambda) {
                    Some(v) => lambda * log_q[j] - lambda * v,
                    None => f64::NAN,
                }
            });
        }
        if let Some(j) = g.iter().position(|x| x.is_nan()) {
            return Err(Error::numerical(format!(
                "kernel column {j} is entirely zero after log-domain stabilization"
            )));
        }
        sweeps += 1;

        // Columns are exact after the g-update; measure the row deviation.
        let (f_ref, g_ref) = (&f, &g);
        residual = maybe_par_max(n, parallel, |i| {
            if pv[i] == 0.0 {
                return 0.0;
            }
            let row = &ct_cols[i * m..(i + 1) * m];
            match lse_shifted(row, g_ref, lambda) {
                Some(v) => ((f_ref[i] / lambda + v).exp() - pv[i]).abs(),
                None => f64::INFINITY,
            }
        });

        if let Some(d) = duals.as_mut() {
            let mass: f64 = f
                .iter()
                .enumerate()
                .map(|(i, &fi)| {
                    if !fi.is_finite() {
                        return 0.0;
                    }
                    let row = &ct_cols[i * m..(i + 1) * m];
                    lse_shifted(row, &g, lambda)
                        .map(|v| (fi / lambda + v).exp())
                        .unwrap_or(0.0)
                })
                .sum();
            let fp: f64 = (0..n)
                .filter(|&i| pv[i] > 0.0)
                .map(|i| pv[i] * f[i])
                .sum();
            let gq: f64 = (0..m)
                .filter(|&j| qv[j] > 0.0)
                .map(|j| qv[j] * g[j])
                .sum();
            d.push(fp + gq - lambda * mass);
        }

        if residual <= settings.stop_residual() {
            converged = true;
            break;
        }
    }

    let mut gamma = DMatrix::<f64>::zeros(n, m);
    {
        let fill_col = |j: usize, col: &mut [f64]| {
            let gj = g[j];
            if !gj.is_finite() {
                return;
            }
            let c_col = &c_cols[j * n..(j + 1) * n];
            for i in 0..n {
                if f[i].is_finite() {
                    col[i] = ((f[i] + gj - c_col[i]) / lambda).exp();
                }
            }
        };
        let data = gamma.as_mut_slice();
        if parallel {
            data.par_chunks_mut(n)
                .enumerate()
                .for_each(|(j, col)| fill_col(j, col));
        } else {
            for (j, col) in data.chunks_mut(n).enumerate() {
                fill_col(j, col);
            }
        }
    }
    let col_potential = DVector::from_vec(g);
    let tol = effective_tol(settings.marginal_tol, residual, converged);
    let coupling = Coupling::with_tolerance(gamma, p.clone(), q.clone(), tol)?;
    Ok((
        CoreRun {
            coupling,
            converged,
            sweeps,
            residual,
            col_potential,
        },
        duals,
    ))
}

/// log Σ_j exp((w_j - costs_j)/λ), with the usual max shift. Terms more than
/// [`LSE_CUTOFF`] below the peak are skipped. `None` when every term is zero.
fn lse_shifted(costs: &[f64], w: &[f64], lambda: f64) -> Option<f64> {
    let inv_lambda = 1.0 / lambda;
    let mut peak = f64::NEG_INFINITY;
    for (cj, wj) in costs.iter().zip(w.iter()) {
        let t = (wj - cj) * inv_lambda;
        if t > peak {
            peak = t;
        }
    }
    if !peak.is_finite() {
        return None;
    }
    let mut acc = 0.0;
    for (cj, wj) in costs.iter().zip(w.iter()) {
        let t = (wj - cj) * inv_lambda - peak;
        if t >= LSE_CUTOFF {
            acc += t.exp();
        }
    }
    Some(peak + acc.ln())
}

/// Couplings from capped-out runs are validated at their achieved residual
/// instead of being thrown away; callers see the non-converged flag. The
/// slack absorbs the difference between the in-loop residual (log-sum-exp
/// with truncation) and the recomputed sum over realized entries.
fn effective_tol(tol: f64, residual: f64, converged: bool) -> f64 {
    if converged {
        tol
    } else {
        tol.max(residual * (1.0 + 1e-6) + f64::MIN_POSITIVE)
    }
}
