//! Controlled correspondence-recovery experiments: planted transformations
//! from an invariance family, Gaussian noise, matching accuracy and
//! map-recovery error, and the multi-method noise sweep.
//!
//! Instances are generated with common random numbers: for a fixed seed the
//! source cloud, planted map, permutation and noise direction are identical
//! across noise levels (σ only scales the noise term) and across methods, so
//! accuracy comparisons are paired rather than drowned in sampling noise.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::assignment_min_cost;
use crate::model::{Coupling, InvarianceBall, LinearMap, PointSet, SchattenOrder};
use crate::procrustes::{random_feasible_map_with, random_orthogonal};
use crate::sinkhorn::{pairwise_sq_dist, sinkhorn_solve, SinkhornSettings};
use crate::solver::{solve_best_of, whiten_pointset, Enforcement, SolverConfig};

/// Largest instance the exact-assignment baseline will accept.
pub const EMD_MAX_POINTS: usize = 200;

/// A planted correspondence problem. Target column `i` is
/// `P · source[planted_matching[i]] + σ·ε_i`.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub source: PointSet,
    pub target: PointSet,
    pub planted_map: LinearMap,
    pub planted_matching: Vec<usize>,
    pub noise_sigma: f64,
}

/// Generates an instance with the transformation applied. Deterministic in
/// `seed`; the same seed at a different `sigma` reuses the same source, map,
/// permutation and noise direction.
pub fn generate_instance(
    dim: usize,
    n: usize,
    family: &InvarianceBall,
    sigma: f64,
    seed: u64,
) -> Result<SyntheticInstance> {
    generate_with_mode(dim, n, family, sigma, seed, true)
}

/// The untransformed twin of [`generate_instance`]: identical randomness,
/// planted map forced to the identity (noise kept). This is what the oracle
/// baseline solves.
pub fn generate_oracle_instance(
    dim: usize,
    n: usize,
    family: &InvarianceBall,
    sigma: f64,
    seed: u64,
) -> Result<SyntheticInstance> {
    generate_with_mode(dim, n, family, sigma, seed, false)
}

fn generate_with_mode(
    dim: usize,
    n: usize,
    family: &InvarianceBall,
    sigma: f64,
    seed: u64,
    apply_map: bool,
) -> Result<SyntheticInstance> {
    if dim == 0 || n < 2 {
        return Err(Error::invalid("need dim >= 1 and n >= 2"));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if family.dim() != dim {
        return Err(Error::dims(format!(
            "family dimension {} does not match dim {dim}",
            family.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let source = DMatrix::from_fn(dim, n, |_, _| normal.sample(&mut rng));

    // The spectral family plants an exactly orthogonal map (scaled by the
    // radius); other families plant a random sphere point of the ball.
    let planted = if family.order().is_infinite() {
        let ortho = random_orthogonal(dim, &mut rng)?;
        LinearMap::new(ortho * family.radius(), *family)?
    } else {
        random_feasible_map_with(&mut rng, family)?
    };

    let mut matching: Vec<usize> = (0..n).collect();
    matching.shuffle(&mut rng);

    let noise: DMatrix<f64> = DMatrix::from_fn(dim, n, |_, _| normal.sample(&mut rng));

    let mut target = DMatrix::<f64>::zeros(dim, n);
    for (i, &src_idx) in matching.iter().enumerate() {
        let column = source.column(src_idx).clone_owned();
        let mapped = if apply_map {
            planted.matrix() * column
        } else {
            column
        };
        for r in 0..dim {
            target[(r, i)] = mapped[r] + sigma * noise[(r, i)];
        }
    }

    Ok(SyntheticInstance {
        source: PointSet::uniform(source)?,
        target: PointSet::uniform(target)?,
        planted_map: planted,
        planted_matching: matching,
        noise_sigma: sigma,
    })
}

/// Hard matching from a coupling: `ψ(i) = argmax_j Γ_ij`, ties broken to the
/// smallest index.
pub fn extract_matching(gamma: &Coupling) -> Vec<usize> {
    let g = gamma.gamma();
    (0..g.nrows())
        .map(|i| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for j in 0..g.ncols() {
                if g[(i, j)] > best.1 {
                    best = (j, g[(i, j)]);
                }
            }
            best.0
        })
        .collect()
}

/// Fraction of positions where the extracted matching agrees with the truth.
pub fn matching_accuracy(psi: &[usize], truth: &[usize]) -> Result<f64> {
    if psi.len() != truth.len() {
        return Err(Error::dims(format!(
            "matching lengths differ: {} vs {}",
            psi.len(),
            truth.len()
        )));
    }
    let hits = psi.iter().zip(truth.iter()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / psi.len() as f64)
}

/// Relative Frobenius error `‖P̂ - P‖_F / ‖P‖_F`.
pub fn map_recovery_error(estimated: &LinearMap, planted: &LinearMap) -> Result<f64> {
    map_recovery_error_raw(estimated.matrix(), planted.matrix())
}

/// As [`map_recovery_error`] for raw matrices; the benchmark composes an
/// estimated map with a whitening transform, and the composite need not live
/// in any canonical ball.
pub fn map_recovery_error_raw(estimated: &DMatrix<f64>, planted: &DMatrix<f64>) -> Result<f64> {
    if estimated.shape() != planted.shape() {
        return Err(Error::dims(format!(
            "map shapes differ: {:?} vs {:?}",
            estimated.shape(),
            planted.shape()
        )));
    }
    Ok((estimated - planted).norm() / planted.norm())
}

/// Baselines and solvers the sweep can run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchMethod {
    /// Exact assignment (unregularized OT) at P = I.
    Emd,
    /// Sharp entropic OT at P = I.
    Sinkhorn,
    /// The alternating solver over the given Schatten order.
    InvariantOt(SchattenOrder),
    /// Entropic OT on the untransformed twin instance (noise kept).
    Oracle,
}

impl BenchMethod {
    pub fn label(&self) -> String {
        match self {
            BenchMethod::Emd => "emd".into(),
            BenchMethod::Sinkhorn => "sinkhorn".into(),
            BenchMethod::InvariantOt(order) => format!("invariant-{order}"),
            BenchMethod::Oracle => "oracle".into(),
        }
    }
}

/// Sweep definition. `restarts` and `baseline_lambda` control the invariant
/// solves and the non-invariant baselines respectively.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub dim: usize,
    pub size: usize,
    pub family: InvarianceBall,
    pub sigmas: Vec<f64>,
    pub methods: Vec<BenchMethod>,
    pub repetitions: usize,
    pub seed: u64,
    /// Random restarts per invariant solve, best final transport cost wins.
    pub restarts: usize,
    /// Regularization for the Sinkhorn and Oracle baselines.
    pub baseline_lambda: f64,
    pub outer_max_iters: usize,
    /// Inner sweep budget per Sinkhorn solve inside invariant runs. The
    /// basin-transition iterations saturate any budget; a moderate cap keeps
    /// sweeps from dominating runtime without changing outcomes.
    pub inner_cap: usize,
}

impl SweepConfig {
    pub fn new(dim: usize, size: usize, family: InvarianceBall) -> Self {
        SweepConfig {
            dim,
            size,
            family,
            sigmas: vec![0.0],
            methods: vec![
                BenchMethod::Emd,
                BenchMethod::Sinkhorn,
                BenchMethod::InvariantOt(SchattenOrder::Infinity),
                BenchMethod::InvariantOt(SchattenOrder::two()),
                BenchMethod::Oracle,
            ],
            repetitions: 5,
            seed: 0,
            restarts: 20,
            baseline_lambda: 1e-3,
            outer_max_iters: 300,
            inner_cap: 300,
        }
    }
}

/// One (method, sigma, repetition) measurement.
#[derive(Debug, Clone, Serialize)]
pub struct BenchCell {
    pub method: String,
    pub p_family: String,
    pub sigma: f64,
    pub repetition: usize,
    pub accuracy: f64,
    pub map_error: Option<f64>,
    pub runtime_ms: f64,
}

/// Mean/std aggregate over repetitions for one (method, sigma) pair.
#[derive(Debug, Clone, Serialize)]
pub struct BenchAggregate {
    pub method: String,
    pub sigma: f64,
    pub repetitions: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_map_error: Option<f64>,
    pub std_map_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    pub aggregates: Vec<BenchAggregate>,
}

/// Runs the full sweep. Cells are independent and executed in parallel;
/// every cell is deterministic in (`seed`, sigma index, method, repetition),
/// with the instance itself shared across methods and noise levels of the
/// same repetition.
pub fn run_noise_sweep(cfg: &SweepConfig) -> Result<BenchReport> {
    use rayon::prelude::*;
    if cfg.repetitions == 0 {
        return Err(Error::invalid("repetitions must be >= 1"));
    }
    if cfg.sigmas.is_empty() || cfg.methods.is_empty() {
        return Err(Error::invalid("sweep needs at least one sigma and one method"));
    }

    let mut jobs = Vec::new();
    for (sigma_idx, &sigma) in cfg.sigmas.iter().enumerate() {
        for (method_idx, &method) in cfg.methods.iter().enumerate() {
            for rep in 0..cfg.repetitions {
                jobs.push((sigma_idx, sigma, method_idx, method, rep));
            }
        }
    }

    let cells: Vec<Result<BenchCell>> = jobs
        .par_iter()
        .map(|&(_, sigma, method_idx, method, rep)| {
            run_cell(cfg, sigma, method, method_idx, rep)
        })
        .collect();
    let mut cells: Vec<BenchCell> = cells.into_iter().collect::<Result<_>>()?;
    cells.sort_by(|a, b| {
        (a.sigma, &a.method, a.repetition)
            .partial_cmp(&(b.sigma, &b.method, b.repetition))
            .unwrap()
    });

    let mut aggregates = Vec::new();
    for &sigma in &cfg.sigmas {
        for method in &cfg.methods {
            let label = method.label();
            let group: Vec<&BenchCell> = cells
                .iter()
                .filter(|c| c.method == label && c.sigma == sigma)
                .collect();
            if group.is_empty() {
                continue;
            }
            let accs: Vec<f64> = group.iter().map(|c| c.accuracy).collect();
            let errs: Vec<f64> = group.iter().filter_map(|c| c.map_error).collect();
            let (mean_err, std_err) = if errs.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&errs);
                (Some(m), Some(s))
            };
            let (mean_acc, std_acc) = mean_std(&accs);
            aggregates.push(BenchAggregate {
                method: label,
                sigma,
                repetitions: group.len(),
                mean_accuracy: mean_acc,
                std_accuracy: std_acc,
                mean_map_error: mean_err,
                std_map_error: std_err,
            });
        }
    }
    Ok(BenchReport { cells, aggregates })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Instance seed shared by all methods of one repetition; σ is not mixed in,
/// so noise levels are paired.
fn instance_seed(master: u64, rep: usize) -> u64 {
    splitmix(master ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(rep as u64 + 1)))
}

fn solver_seed(instance: u64, method_idx: usize) -> u64 {
    splitmix(instance ^ (0xbf58_476d_1ce4_e5b9u64.wrapping_mul(method_idx as u64 + 1)))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean cost scale of a solve: the expected squared distance between
/// independent draws of the two clouds, used to anchor λ0.
fn cost_scale(a: &PointSet, b: &PointSet) -> f64 {
    let mean_sq = |ps: &PointSet| {
        ps.data()
            .column_iter()
            .zip(ps.weights().as_vector().iter())
            .map(|(c, &w)| w * c.norm_squared())
            .sum::<f64>()
    };
    mean_sq(a) + mean_sq(b)
}

fn run_cell(
    cfg: &SweepConfig,
    sigma: f64,
    method: BenchMethod,
    method_idx: usize,
    rep: usize,
) -> Result<BenchCell> {
    let inst_seed = instance_seed(cfg.seed, rep);
    let instance = generate_instance(cfg.dim, cfg.size, &cfg.family, sigma, inst_seed)?;
    let start = Instant::now();

    let (accuracy, map_error) = match method {
        BenchMethod::Emd => {
            if cfg.size > EMD_MAX_POINTS {
                return Err(Error::invalid(format!(
                    "emd baseline capped at {EMD_MAX_POINTS} points, got {}",
                    cfg.size
                )));
            }
            let cost = pairwise_sq_dist(instance.target.data(), instance.source.data())?;
            let psi = assignment_min_cost(cost.matrix())?;
            (matching_accuracy(&psi, &instance.planted_matching)?, None)
        }
        BenchMethod::Sinkhorn => {
            let cost = pairwise_sq_dist(instance.target.data(), instance.source.data())?;
            let psi = sharp_baseline_matching(cfg, &cost, &instance)?;
            (matching_accuracy(&psi, &instance.planted_matching)?, None)
        }
        BenchMethod::Oracle => {
            let twin =
                generate_oracle_instance(cfg.dim, cfg.size, &cfg.family, sigma, inst_seed)?;
            let cost = pairwise_sq_dist(twin.target.data(), twin.source.data())?;
            let psi = sharp_baseline_matching(cfg, &cost, &twin)?;
            (matching_accuracy(&psi, &twin.planted_matching)?, None)
        }
        BenchMethod::InvariantOt(order) => {
            let ball = InvarianceBall::identity_feasible(order, cfg.dim)?;
            let mut solver_cfg = SolverConfig::new(ball);
            solver_cfg.seed = solver_seed(inst_seed, method_idx);
            solver_cfg.outer_max_iters = cfg.outer_max_iters;

            // Finite orders run under the whitened precondition: whiten the
            // mapped side and fold the whitening into the estimated map.
            let (mapped_side, whitener) = if solver_cfg.enforcement == Enforcement::Whitened {
                let white = whiten_pointset(&instance.source)?;
                let w = compute_whitener(&instance.source)?;
                (white, Some(w))
            } else {
                (instance.source.clone(), None)
            };
            let scale = cost_scale(&instance.target, &mapped_side);
            solver_cfg.lambda0 = scale;
            solver_cfg.lambda_min = scale * 1e-3;
            solver_cfg.sinkhorn.max_inner_iters = cfg.inner_cap;
            let result = solve_best_of(&instance.target, &mapped_side, &solver_cfg, cfg.restarts)?;
            let psi = extract_matching(&result.coupling);
            let accuracy = matching_accuracy(&psi, &instance.planted_matching)?;
            let estimated_full = match &whitener {
                Some(w) => result.map.matrix() * w,
                None => result.map.matrix().clone(),
            };
            let err = map_recovery_error_raw(&estimated_full, instance.planted_map.matrix())?;
            (accuracy, Some(err))
        }
    };

    Ok(BenchCell {
        method: method.label(),
        p_family: cfg.family.order().to_string(),
        sigma,
        repetition: rep,
        accuracy,
        map_error,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// The whitening transform `S^(-1/2)` itself, for composing estimated maps
/// back into the original coordinates.
fn compute_whitener(y: &PointSet) -> Result<DMatrix<f64>> {
    let q = y.weights().as_vector();
    let weighted = DMatrix::from_fn(y.dim(), y.len(), |r, c| y.data()[(r, c)] * q[c]);
    let s = &weighted * weighted.transpose();
    crate::linalg::sym_inv_sqrt(&s, 1e-12)
}

fn sharp_baseline_matching(
    cfg: &SweepConfig,
    cost: &crate::sinkhorn::CostMatrix,
    instance: &SyntheticInstance,
) -> Result<Vec<usize>> {
    let mut settings = SinkhornSettings::new(cfg.baseline_lambda)?;
    settings.max_inner_iters = 20_000;
    let run = sinkhorn_solve(
        cost,
        instance.target.weights(),
        instance.source.weights(),
        &settings,
    )?;
    Ok(extract_matching(&run.coupling))
}

/// Writes the per-cell table as CSV with the canonical column set.
pub fn write_cells_csv<W: std::io::Write>(cells: &[BenchCell], out: &mut W) -> Result<()> {
    writeln!(
        out,
        "method,p_family,sigma,repetition,accuracy,map_error,runtime_ms"
    )?;
    for c in cells {
        let err = c.map_error.map(|e| format!("{e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.method, c.p_family, c.sigma, c.repetition, c.accuracy, err, c.runtime_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn spectral_ball(d: usize) -> InvarianceBall {
        InvarianceBall::identity_feasible(SchattenOrder::Infinity, d).unwrap()
    }

    #[test]
    fn orthogonal_plant_preserves_pairwise_distances() {
        let inst = generate_instance(3, 20, &spectral_ball(3), 0.0, 7).unwrap();
        // Distances among permuted source columns must equal distances among
        // target columns when the planted map is an isometry.
        let src = inst.source.data();
        let tgt = inst.target.data();
        for i in 0..20 {
            for j in 0..20 {
                let si = src.column(inst.planted_matching[i]);
                let sj = src.column(inst.planted_matching[j]);
                let d_src = (si - sj).norm();
                let d_tgt = (tgt.column(i) - tgt.column(j)).norm();
                assert_relative_eq!(d_src, d_tgt, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn oracle_instance_is_permuted_source() {
        let inst = generate_oracle_instance(3, 15, &spectral_ball(3), 0.0, 9).unwrap();
        for i in 0..15 {
            let diff = inst.target.data().column(i)
                - inst.source.data().column(inst.planted_matching[i]);
            assert!(diff.norm() < 1e-14);
        }
    }

    #[test]
    fn noise_magnitude_matches_sigma() {
        let sigma = 0.1;
        let seed = 11;
        let noisy = generate_instance(3, 100, &spectral_ball(3), sigma, seed).unwrap();
        let clean = generate_instance(3, 100, &spectral_ball(3), 0.0, seed).unwrap();
        let mut total = 0.0;
        for i in 0..100 {
            total += (noisy.target.data().column(i) - clean.target.data().column(i))
                .norm_squared();
        }
        let per_column = total / 100.0;
        let expected = 3.0 * sigma * sigma;
        assert!(
            (per_column - expected).abs() <= 0.2 * expected,
            "per-column deviation {per_column} vs expected {expected}"
        );
    }

    #[test]
    fn common_random_numbers_across_sigmas() {
        let a = generate_instance(3, 10, &spectral_ball(3), 0.0, 13).unwrap();
        let b = generate_instance(3, 10, &spectral_ball(3), 0.5, 13).unwrap();
        assert_eq!(a.planted_matching, b.planted_matching);
        assert_eq!(a.source.data(), b.source.data());
        assert_eq!(a.planted_map.matrix(), b.planted_map.matrix());
    }

    #[test]
    fn instances_are_deterministic() {
        let a = generate_instance(4, 12, &spectral_ball(4), 0.3, 21).unwrap();
        let b = generate_instance(4, 12, &spectral_ball(4), 0.3, 21).unwrap();
        assert_eq!(a.target.data(), b.target.data());
    }

    #[test]
    fn extract_matching_cases() {
        let p = crate::model::Histogram::uniform(3);
        let identity = Coupling::new(DMatrix::identity(3, 3) / 3.0, p.clone(), p.clone()).unwrap();
        assert_eq!(extract_matching(&identity), vec![0, 1, 2]);

        let mut rev = DMatrix::zeros(3, 3);
        for i in 0..3 {
            rev[(i, 2 - i)] = 1.0 / 3.0;
        }
        let reversal = Coupling::new(rev, p.clone(), p.clone()).unwrap();
        assert_eq!(extract_matching(&reversal), vec![2, 1, 0]);

        let product = Coupling::product(p.clone(), p);
        assert_eq!(extract_matching(&product), vec![0, 0, 0]);
    }

    #[test]
    fn extract_matching_is_column_permutation_equivariant() {
        let p = crate::model::Histogram::uniform(3);
        let third = 1.0 / 3.0;
        let g = dmatrix![
            0.18, 0.10, third - 0.28;
            0.02, 0.25, third - 0.27;
            third - 0.13, 0.01, 0.12
        ];
        let q = crate::model::Histogram::new(nalgebra::DVector::from_fn(3, |j, _| {
            g.column(j).sum()
        }))
        .unwrap();
        let gamma = Coupling::new(g.clone(), p.clone(), q).unwrap();
        let psi = extract_matching(&gamma);
        // Permute columns by π = (1, 2, 0): column j of the new coupling is
        // column π(j) of the old one.
        let perm = [1usize, 2, 0];
        let permuted = DMatrix::from_fn(3, 3, |i, j| g[(i, perm[j])]);
        let q2 = crate::model::Histogram::new(nalgebra::DVector::from_fn(3, |j, _| {
            permuted.column(j).sum()
        }))
        .unwrap();
        let gamma2 = Coupling::new(permuted.clone(), p, q2).unwrap();
        let psi2 = extract_matching(&gamma2);
        for i in 0..3 {
            assert_eq!(perm[psi2[i]], psi[i]);
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(matching_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(matching_accuracy(&[1, 2, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(
            matching_accuracy(&[0, 1, 2, 3, 4, 8, 9, 5, 6, 7], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9])
                .unwrap(),
            0.5
        );
        assert!(matching_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn map_error_cases() {
        let ball = spectral_ball(2);
        let p = LinearMap::new(DMatrix::identity(2, 2), ball).unwrap();
        let minus = LinearMap::new(-DMatrix::<f64>::identity(2, 2), ball).unwrap();
        assert_eq!(map_recovery_error(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(map_recovery_error(&minus, &p).unwrap(), 2.0);
        let perturbed = p.matrix() + DMatrix::from_element(2, 2, 0.05);
        let expected = (perturbed.clone() - p.matrix()).norm() / p.matrix().norm();
        assert_relative_eq!(
            map_recovery_error_raw(&perturbed, p.matrix()).unwrap(),
            expected
        );
    }

    #[test]
    fn sweep_smoke_on_clean_orthogonal_instances() {
        let mut cfg = SweepConfig::new(3, 30, spectral_ball(3));
        cfg.sigmas = vec![0.0];
        cfg.methods = vec![
            BenchMethod::Emd,
            BenchMethod::Oracle,
            BenchMethod::InvariantOt(SchattenOrder::Infinity),
        ];
        cfg.repetitions = 1;
        cfg.restarts = 8;
        cfg.seed = 3;
        let report = run_noise_sweep(&cfg).unwrap();
        assert_eq!(report.cells.len(), 3);
        let agg = |label: &str| {
            report
                .aggregates
                .iter()
                .find(|a| a.method == label)
                .unwrap()
                .mean_accuracy
        };
        assert_eq!(agg("oracle"), 1.0);
        assert!(agg("invariant-inf") >= agg("emd"));
        let mut csv = Vec::new();
        write_cells_csv(&report.cells, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("method,p_family,sigma,repetition,accuracy"));
        assert_eq!(text.lines().count(), 4);
    }
}
