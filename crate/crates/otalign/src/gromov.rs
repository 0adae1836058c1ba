//! Numerical verification that the Frobenius-ball objective and the
//! Gromov-Wasserstein objective coincide under cosine similarity and squared
//! loss.
//!
//! For unit-column matrices, `‖XΓYᵀ‖_F² = ⟨CxΓ, ΓCy⟩` with `Cx = XᵀX`,
//! `Cy = YᵀY`, which is exactly the Γ-dependent cross term of the quartic GW
//! sum; the remaining terms depend only on the marginals. This module only
//! evaluates the objectives (it never optimizes them): it exists as a
//! correctness instrument, wired to the `check-gw` CLI command.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::frobenius_inner;
use crate::model::{Coupling, Histogram, PointSet};

/// Cell cap for the quadruple-loop reference evaluation.
pub const NAIVE_GW_MAX_CELLS: usize = 400;

/// Column-norm slack tolerated when validating unit-normalized inputs.
const UNIT_COLUMN_TOL: f64 = 1e-8;

/// A Gromov-Wasserstein instance: two intra-space cosine-similarity matrices
/// with their marginals.
#[derive(Debug, Clone)]
pub struct GwInstance {
    cx: DMatrix<f64>,
    cy: DMatrix<f64>,
    p: Histogram,
    q: Histogram,
}

impl GwInstance {
    pub fn new(cx: DMatrix<f64>, cy: DMatrix<f64>, p: Histogram, q: Histogram) -> Result<Self> {
        validate_similarity(&cx, "Cx")?;
        validate_similarity(&cy, "Cy")?;
        if cx.nrows() != p.len() || cy.nrows() != q.len() {
            return Err(Error::dims(format!(
                "similarity sizes {}x{} and {}x{} do not match marginals {} and {}",
                cx.nrows(),
                cx.ncols(),
                cy.nrows(),
                cy.ncols(),
                p.len(),
                q.len()
            )));
        }
        Ok(GwInstance { cx, cy, p, q })
    }

    /// Builds cosine matrices `Cx = XᵀX`, `Cy = YᵀY` from unit-column point
    /// sets.
    pub fn from_pointsets(x: &PointSet, y: &PointSet) -> Result<Self> {
        check_unit_columns(x.data())?;
        check_unit_columns(y.data())?;
        let cx = clamp_cosine(x.data().tr_mul(x.data()));
        let cy = clamp_cosine(y.data().tr_mul(y.data()));
        GwInstance::new(cx, cy, x.weights().clone(), y.weights().clone())
    }

    pub fn cx(&self) -> &DMatrix<f64> {
        &self.cx
    }

    pub fn cy(&self) -> &DMatrix<f64> {
        &self.cy
    }

    pub fn p(&self) -> &Histogram {
        &self.p
    }

    pub fn q(&self) -> &Histogram {
        &self.q
    }
}

fn validate_similarity(c: &DMatrix<f64>, name: &str) -> Result<()> {
    if c.nrows() != c.ncols() {
        return Err(Error::dims(format!(
            "{name} must be square, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    for i in 0..c.nrows() {
        if (c[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!(
                "{name} diagonal entry {i} is {}, expected 1",
                c[(i, i)]
            )));
        }
        for j in 0..c.ncols() {
            let v = c[(i, j)];
            if !v.is_finite() || v.abs() > 1.0 + 1e-10 {
                return Err(Error::invalid(format!(
                    "{name}[{i},{j}] = {v} is outside [-1, 1]"
                )));
            }
            if (v - c[(j, i)]).abs() > 1e-10 {
                return Err(Error::invalid(format!("{name} is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

fn check_unit_columns(m: &DMatrix<f64>) -> Result<()> {
    for (j, col) in m.column_iter().enumerate() {
        if (col.norm() - 1.0).abs() > UNIT_COLUMN_TOL {
            return Err(Error::invalid(format!(
                "column {j} has norm {}, expected 1 (normalize first)",
                col.norm()
            )));
        }
    }
    Ok(())
}

/// Round-off from the Gram product can push cosines infinitesimally outside
/// [-1, 1]; pin them back and make the diagonal exact.
fn clamp_cosine(mut c: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            c[(i, j)] = c[(i, j)].clamp(-1.0, 1.0);
        }
        c[(i, i)] = 1.0;
    }
    c
}

/// GW objective `Σ_ijkl ½(Cx_ik - Cy_jl)² Γ_ij Γ_kl`, evaluated through the
/// factored form `½(pᵀ(Cx∘Cx)p + qᵀ(Cy∘Cy)q) - ⟨CxΓ, ΓCy⟩`: the squared
/// terms collapse onto the marginals and only the cross term sees Γ.
pub fn gw_objective(inst: &GwInstance, gamma: &Coupling) -> Result<f64> {
    check_shapes(inst, gamma)?;
    let constants = 0.5 * (marginal_quadratic(&inst.cx, &inst.p) + marginal_quadratic(&inst.cy, &inst.q));
    Ok(constants - gw_cross_term(inst, gamma))
}

/// The Γ-dependent cross term `Σ Cx_ik Cy_jl Γ_ij Γ_kl = ⟨CxΓ, ΓCy⟩`.
pub fn gw_cross_term(inst: &GwInstance, gamma: &Coupling) -> f64 {
    let left = &inst.cx * gamma.gamma();
    let right = gamma.gamma() * &inst.cy;
    frobenius_inner(&left, &right)
}

fn marginal_quadratic(c: &DMatrix<f64>, h: &Histogram) -> f64 {
    let w = h.as_vector();
    let mut acc = 0.0;
    for i in 0..c.nrows() {
        for k in 0..c.ncols() {
            acc += c[(i, k)] * c[(i, k)] * w[i] * w[k];
        }
    }
    acc
}

/// Quadruple-loop reference for the GW objective; capped at
/// [`NAIVE_GW_MAX_CELLS`] coupling cells.
pub fn gw_objective_naive(inst: &GwInstance, gamma: &Coupling) -> Result<f64> {
    check_shapes(inst, gamma)?;
    let (n, m) = (gamma.nrows(), gamma.ncols());
    if n * m > NAIVE_GW_MAX_CELLS {
        return Err(Error::invalid(format!(
            "naive GW evaluation capped at {NAIVE_GW_MAX_CELLS} cells, got {}",
            n * m
        )));
    }
    let g = gamma.gamma();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..m {
            for k in 0..n {
                for l in 0..m {
                    let diff = inst.cx[(i, k)] - inst.cy[(j, l)];
                    acc += 0.5 * diff * diff * g[(i, j)] * g[(k, l)];
                }
            }
        }
    }
    Ok(acc)
}

fn check_shapes(inst: &GwInstance, gamma: &Coupling) -> Result<()> {
    if gamma.nrows() != inst.cx.nrows() || gamma.ncols() != inst.cy.nrows() {
        return Err(Error::dims(format!(
            "coupling is {}x{} but similarities are {}x{} and {}x{}",
            gamma.nrows(),
            gamma.ncols(),
            inst.cx.nrows(),
            inst.cx.ncols(),
            inst.cy.nrows(),
            inst.cy.ncols()
        )));
    }
    // The factored form collapses the squared terms onto the instance
    // marginals, which is only valid for couplings in Π(p, q).
    let row_dev = (gamma.row_marginal().as_vector() - inst.p.as_vector()).amax();
    let col_dev = (gamma.col_marginal().as_vector() - inst.q.as_vector()).amax();
    if row_dev > 1e-6 || col_dev > 1e-6 {
        return Err(Error::invalid(format!(
            "coupling marginals deviate from the instance marginals by \
             ({row_dev:.3e}, {col_dev:.3e})"
        )));
    }
    Ok(())
}

/// Frobenius-ball objective `‖XΓYᵀ‖_F²` for unit-column matrices.
pub fn frobenius_objective(x: &PointSet, y: &PointSet, gamma: &Coupling) -> Result<f64> {
    check_unit_columns(x.data())?;
    check_unit_columns(y.data())?;
    if x.len() != gamma.nrows() || y.len() != gamma.ncols() {
        return Err(Error::dims(format!(
            "coupling is {}x{} but point sets have {} and {} columns",
            gamma.nrows(),
            gamma.ncols(),
            x.len(),
            y.len()
        )));
    }
    let cross = (x.data() * gamma.gamma()) * y.data().transpose();
    Ok(cross.norm_squared())
}

/// Side-by-side evaluation of the GW cross term and `‖XΓYᵀ‖_F²`; the two are
/// equal up to round-off, and the report carries the observed difference.
#[derive(Debug, Clone, Copy)]
pub struct EquivalenceReport {
    pub gw_cross_term: f64,
    pub frobenius_value: f64,
    pub abs_diff: f64,
}

pub fn gw_frobenius_equivalence(
    x: &PointSet,
    y: &PointSet,
    gamma: &Coupling,
) -> Result<EquivalenceReport> {
    let inst = GwInstance::from_pointsets(x, y)?;
    let cross = gw_cross_term(&inst, gamma);
    let frob = frobenius_objective(x, y, gamma)?;
    Ok(EquivalenceReport {
        gw_cross_term: cross,
        frobenius_value: frob,
        abs_diff: (cross - frob).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::{sinkhorn_solve, CostKind, CostMatrix, SinkhornSettings};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_points(d: usize, n: usize, rng: &mut ChaCha8Rng) -> PointSet {
        let normal = StandardNormal;
        let mut data = DMatrix::from_fn(d, n, |_, _| normal.sample(rng));
        for mut col in data.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
        PointSet::uniform(data).unwrap()
    }

    #[test]
    fn single_point_instance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = unit_points(3, 1, &mut rng);
        let y = unit_points(3, 1, &mut rng);
        let inst = GwInstance::from_pointsets(&x, &y).unwrap();
        let gamma = Coupling::product(Histogram::uniform(1), Histogram::uniform(1));
        assert_relative_eq!(gw_objective(&inst, &gamma).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn identical_spaces_identity_matching_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = unit_points(4, 6, &mut rng);
        let inst = GwInstance::from_pointsets(&x, &x).unwrap();
        let gamma = Coupling::new(
            DMatrix::identity(6, 6) / 6.0,
            Histogram::uniform(6),
            Histogram::uniform(6),
        )
        .unwrap();
        let value = gw_objective(&inst, &gamma).unwrap();
        let naive = gw_objective_naive(&inst, &gamma).unwrap();
        assert_relative_eq!(value, naive, epsilon = 1e-10);
        assert_relative_eq!(value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn factored_form_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = unit_points(3, 4, &mut rng);
            let y = unit_points(3, 5, &mut rng);
            let inst = GwInstance::from_pointsets(&x, &y).unwrap();
            let gamma = random_coupling(4, 5, &mut rng);
            let fast = gw_objective(&inst, &gamma).unwrap();
            let naive = gw_objective_naive(&inst, &gamma).unwrap();
            assert_relative_eq!(fast, naive, epsilon = 1e-10);
            assert!(fast >= -1e-12, "GW objective must be nonnegative");
        }
    }

    /// Random coupling with uniform marginals, via Sinkhorn on a random cost.
    fn random_coupling(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Coupling {
        let cost = CostMatrix::new(
            DMatrix::from_fn(n, m, |_, _| rng.random::<f64>()),
            CostKind::SquaredEuclidean,
        )
        .unwrap();
        // Tight marginals so factored-vs-naive comparisons are not polluted
        // by coupling infeasibility.
        let mut settings = SinkhornSettings::new(0.3).unwrap();
        settings.max_inner_iters = 100_000;
        settings.marginal_tol = 1e-12;
        let run = sinkhorn_solve(&cost, &Histogram::uniform(n), &Histogram::uniform(m), &settings)
            .unwrap();
        assert!(run.converged);
        run.coupling
    }

    #[test]
    fn frobenius_objective_identity_columns() {
        let d = 4;
        let x = PointSet::uniform(DMatrix::identity(d, d)).unwrap();
        let gamma = Coupling::new(
            DMatrix::identity(d, d) / d as f64,
            Histogram::uniform(d),
            Histogram::uniform(d),
        )
        .unwrap();
        assert_relative_eq!(
            frobenius_objective(&x, &x, &gamma).unwrap(),
            1.0 / d as f64,
            epsilon = 1e-12
        );
    }

    #[test]
    fn frobenius_objective_product_coupling_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = unit_points(3, 6, &mut rng);
        let y = unit_points(3, 8, &mut rng);
        let gamma = Coupling::product(x.weights().clone(), y.weights().clone());
        let got = frobenius_objective(&x, &y, &gamma).unwrap();
        let xp = x.data() * x.weights().as_vector();
        let yq = y.data() * y.weights().as_vector();
        assert_relative_eq!(got, xp.norm_squared() * yq.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn frobenius_objective_rejects_unnormalized() {
        let x = PointSet::uniform(DMatrix::from_element(2, 3, 2.0)).unwrap();
        let y = PointSet::uniform(DMatrix::identity(2, 2)).unwrap();
        let gamma = Coupling::product(Histogram::uniform(3), Histogram::uniform(2));
        assert!(frobenius_objective(&x, &y, &gamma).is_err());
    }

    #[test]
    fn equivalence_on_product_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = unit_points(3, 6, &mut rng);
        let y = unit_points(3, 8, &mut rng);
        let gamma = Coupling::product(x.weights().clone(), y.weights().clone());
        let report = gw_frobenius_equivalence(&x, &y, &gamma).unwrap();
        assert!(report.abs_diff <= 1e-10, "diff {}", report.abs_diff);
    }

    #[test]
    fn equivalence_on_permutation_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = unit_points(3, 5, &mut rng);
        let mut perm = DMatrix::<f64>::zeros(5, 5);
        for i in 0..5 {
            perm[(i, (i + 2) % 5)] = 0.2;
        }
        let gamma =
            Coupling::new(perm, Histogram::uniform(5), Histogram::uniform(5)).unwrap();
        let report = gw_frobenius_equivalence(&x, &x, &gamma).unwrap();
        assert!(report.abs_diff <= 1e-12, "diff {}", report.abs_diff);
    }

    #[test]
    fn equivalence_on_sinkhorn_couplings() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = rng.random_range(3..9usize);
            let m = rng.random_range(3..9usize);
            let x = unit_points(3, n, &mut rng);
            let y = unit_points(3, m, &mut rng);
            let cost = CostMatrix::new(
                DMatrix::from_fn(n, m, |_, _| rng.random::<f64>()),
                CostKind::SquaredEuclidean,
            )
            .unwrap();
            let run = sinkhorn_solve(
                &cost,
                x.weights(),
                y.weights(),
                &SinkhornSettings::new(0.1).unwrap(),
            )
            .unwrap();
            let report = gw_frobenius_equivalence(&x, &y, &run.coupling).unwrap();
            worst = worst.max(report.abs_diff);
        }
        assert!(worst <= 1e-9, "worst diff {worst}");
    }

    #[test]
    fn argmax_transfer_over_candidate_set() {
        // The Γ minimizing the GW objective over a finite candidate set is
        // the Γ maximizing the Frobenius objective over the same set.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = unit_points(3, 5, &mut rng);
        let y = unit_points(3, 5, &mut rng);
        let inst = GwInstance::from_pointsets(&x, &y).unwrap();
        let candidates: Vec<Coupling> = (0..12).map(|_| random_coupling(5, 5, &mut rng)).collect();
        let gw_min = candidates
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                gw_objective(&inst, a)
                    .unwrap()
                    .total_cmp(&gw_objective(&inst, b).unwrap())
            })
            .map(|(i, _)| i)
            .unwrap();
        let frob_max = candidates
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                frobenius_objective(&x, &y, a)
                    .unwrap()
                    .total_cmp(&frobenius_objective(&x, &y, b).unwrap())
            })
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(gw_min, frob_max);
    }

    #[test]
    fn instance_validation_rejects_bad_similarity() {
        let p = Histogram::uniform(2);
        let bad_diag = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 1.0]);
        assert!(GwInstance::new(bad_diag, DMatrix::identity(2, 2), p.clone(), p.clone()).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.1, 1.0]);
        assert!(GwInstance::new(asym, DMatrix::identity(2, 2), p.clone(), p.clone()).is_err());
        let out_of_range = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(GwInstance::new(out_of_range, DMatrix::identity(2, 2), p.clone(), p).is_err());
    }
}
