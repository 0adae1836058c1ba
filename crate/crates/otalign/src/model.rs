//! Shared mathematical objects: point sets, histograms, couplings, linear
//! maps and the Schatten-norm balls constraining them.
//!
//! All types are immutable after construction and validate their invariants
//! eagerly, so a value that exists is a value that is well-formed.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sorted_svd;

/// Absolute slack allowed on histogram mass before construction fails.
pub const HISTOGRAM_MASS_TOL: f64 = 1e-6;

/// Default max-norm tolerance on coupling marginals; matches the Sinkhorn
/// stopping residual so solver outputs validate against their own target.
pub const DEFAULT_MARGINAL_TOL: f64 = 1e-6;

/// Relative slack allowed on `‖P‖_p ≤ k` when admitting a map into a ball.
pub const BALL_MEMBERSHIP_SLACK: f64 = 1e-8;

/// Finite orders below `1 + ORDER_COLLAPSE_TOL` are treated as exactly 1 to
/// keep the dual exponent `1/(p-1)` representable.
pub const ORDER_COLLAPSE_TOL: f64 = 1e-6;

/// Schatten exponent `p ∈ [1, ∞]`, with the infinite case carried as a tag
/// rather than a floating-point infinity so dual-exponent arithmetic
/// (`q = p/(p-1)`) never mixes `inf` into ordinary formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchattenOrder {
    Finite(f64),
    Infinity,
}

impl SchattenOrder {
    pub fn new(p: f64) -> Result<Self> {
        if !p.is_finite() || p < 1.0 {
            return Err(Error::invalid(format!(
                "Schatten order must be finite and >= 1, got {p}"
            )));
        }
        Ok(SchattenOrder::Finite(p))
    }

    pub const fn infinity() -> Self {
        SchattenOrder::Infinity
    }

    pub const fn one() -> Self {
        SchattenOrder::Finite(1.0)
    }

    pub const fn two() -> Self {
        SchattenOrder::Finite(2.0)
    }

    /// True when this order behaves as the nuclear norm (p = 1 up to the
    /// collapse tolerance).
    pub fn is_nuclear(&self) -> bool {
        matches!(self, SchattenOrder::Finite(p) if *p < 1.0 + ORDER_COLLAPSE_TOL)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, SchattenOrder::Infinity)
    }

    /// Hölder dual exponent: q = p/(p-1), with 1 ↔ ∞.
    pub fn dual(&self) -> SchattenOrder {
        match self {
            SchattenOrder::Infinity => SchattenOrder::Finite(1.0),
            SchattenOrder::Finite(_) if self.is_nuclear() => SchattenOrder::Infinity,
            SchattenOrder::Finite(p) => SchattenOrder::Finite(p / (p - 1.0)),
        }
    }

    /// ℓp norm of a nonnegative vector under this order.
    pub fn vector_norm(&self, v: &DVector<f64>) -> f64 {
        match self {
            SchattenOrder::Infinity => v.iter().cloned().fold(0.0, f64::max),
            SchattenOrder::Finite(_) if self.is_nuclear() => v.sum(),
            SchattenOrder::Finite(p) => {
                let max = v.iter().cloned().fold(0.0, f64::max);
                if max == 0.0 {
                    return 0.0;
                }
                // Factor out the peak before exponentiating: keeps sigma^p
                // representable for large p.
                let sum: f64 = v.iter().map(|x| (x / max).powf(*p)).sum();
                max * sum.powf(1.0 / p)
            }
        }
    }

    /// Schatten norm of the identity of size `d`; the radius making the
    /// identity map exactly feasible.
    pub fn identity_norm(&self, d: usize) -> f64 {
        match self {
            SchattenOrder::Infinity => 1.0,
            SchattenOrder::Finite(p) => (d as f64).powf(1.0 / p),
        }
    }
}

impl fmt::Display for SchattenOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchattenOrder::Infinity => write!(f, "inf"),
            SchattenOrder::Finite(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for SchattenOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "INF" | "infinity" | "oo" => Ok(SchattenOrder::Infinity),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| Error::invalid(format!("cannot parse Schatten order '{other}'")))?;
                SchattenOrder::new(p)
            }
        }
    }
}

/// Probability weights over the columns of a point set.
///
/// Construction fails when the mass deviates from 1 by more than
/// [`HISTOGRAM_MASS_TOL`] (an ingestion bug, not something to paper over);
/// smaller deviations are renormalized exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    mass: DVector<f64>,
}

impl Histogram {
    pub fn new(mass: DVector<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::invalid("histogram must have at least one entry"));
        }
        for (i, &w) in mass.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!(
                    "histogram entry {i} is {w}; entries must be finite and >= 0"
                )));
            }
        }
        let total = mass.sum();
        if (total - 1.0).abs() > HISTOGRAM_MASS_TOL {
            return Err(Error::invalid(format!(
                "histogram mass is {total}, outside 1 ± {HISTOGRAM_MASS_TOL}"
            )));
        }
        Ok(Histogram { mass: mass / total })
    }

    pub fn uniform(n: usize) -> Self {
        Histogram {
            mass: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.mass
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.mass.iter().all(|&w| (w - u).abs() <= 1e-12)
    }
}

/// A weighted set of points: a `d x n` matrix whose columns are feature
/// vectors, plus a histogram over the columns.
#[derive(Debug, Clone)]
pub struct PointSet {
    data: DMatrix<f64>,
    weights: Histogram,
}

impl PointSet {
    pub fn new(data: DMatrix<f64>, weights: Histogram) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("point set must be at least 1x1"));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("point set contains non-finite entries"));
        }
        if weights.len() != data.ncols() {
            return Err(Error::dims(format!(
                "histogram length {} does not match {} columns",
                weights.len(),
                data.ncols()
            )));
        }
        Ok(PointSet { data, weights })
    }

    /// Point set with uniform weights over the columns.
    pub fn uniform(data: DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        Self::new(data, Histogram::uniform(n))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn weights(&self) -> &Histogram {
        &self.weights
    }
}

/// Max-norm residuals of a candidate coupling against its marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingResidual {
    pub max_row: f64,
    pub max_col: f64,
    pub min_entry: f64,
}

impl CouplingResidual {
    pub fn within(&self, tol: f64) -> bool {
        self.min_entry >= 0.0 && self.max_row <= tol && self.max_col <= tol
    }
}

/// Checks nonnegativity and both marginal constraints of `gamma` against
/// `(p, q)` at tolerance `tol`, reporting the worst residuals either way.
pub fn validate_coupling(
    gamma: &DMatrix<f64>,
    p: &Histogram,
    q: &Histogram,
    tol: f64,
) -> Result<(bool, CouplingResidual)> {
    if gamma.nrows() != p.len() || gamma.ncols() != q.len() {
        return Err(Error::dims(format!(
            "coupling is {}x{} but marginals have lengths {} and {}",
            gamma.nrows(),
            gamma.ncols(),
            p.len(),
            q.len()
        )));
    }
    let mut min_entry = f64::INFINITY;
    let mut col_sums = vec![0.0f64; gamma.ncols()];
    let mut max_row = 0.0f64;
    for i in 0..gamma.nrows() {
        let mut row_sum = 0.0;
        for j in 0..gamma.ncols() {
            let g = gamma[(i, j)];
            min_entry = min_entry.min(g);
            row_sum += g;
            col_sums[j] += g;
        }
        max_row = max_row.max((row_sum - p.as_vector()[i]).abs());
    }
    let max_col = col_sums
        .iter()
        .zip(q.as_vector().iter())
        .map(|(c, q)| (c - q).abs())
        .fold(0.0, f64::max);
    let residual = CouplingResidual {
        max_row,
        max_col,
        min_entry,
    };
    Ok((residual.within(tol), residual))
}

/// A nonnegative `n x m` matrix in the transportation polytope of its two
/// marginal histograms.
#[derive(Debug, Clone)]
pub struct Coupling {
    gamma: DMatrix<f64>,
    row_marginal: Histogram,
    col_marginal: Histogram,
}

impl Coupling {
    /// Validates at the default marginal tolerance.
    pub fn new(gamma: DMatrix<f64>, p: Histogram, q: Histogram) -> Result<Self> {
        Self::with_tolerance(gamma, p, q, DEFAULT_MARGINAL_TOL)
    }

    pub fn with_tolerance(
        gamma: DMatrix<f64>,
        p: Histogram,
        q: Histogram,
        tol: f64,
    ) -> Result<Self> {
        let (ok, residual) = validate_coupling(&gamma, &p, &q, tol)?;
        if !ok {
            return Err(Error::invalid(format!(
                "coupling violates polytope constraints: max row residual {:.3e}, \
                 max col residual {:.3e}, min entry {:.3e}, tolerance {tol:.3e}",
                residual.max_row, residual.max_col, residual.min_entry
            )));
        }
        Ok(Coupling {
            gamma,
            row_marginal: p,
            col_marginal: q,
        })
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn row_marginal(&self) -> &Histogram {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &Histogram {
        &self.col_marginal
    }

    pub fn nrows(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.gamma.ncols()
    }

    /// Independence coupling `p qᵀ`, feasible for any marginal pair.
    pub fn product(p: Histogram, q: Histogram) -> Self {
        let gamma = p.as_vector() * q.as_vector().transpose();
        Coupling {
            gamma,
            row_marginal: p,
            col_marginal: q,
        }
    }
}

/// The feasible set `{P : ‖P‖_p ≤ k}` of `d x d` linear maps under a
/// Schatten-norm bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceBall {
    order: SchattenOrder,
    radius: f64,
    dim: usize,
}

impl InvarianceBall {
    pub fn new(order: SchattenOrder, radius: f64, dim: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        if dim == 0 {
            return Err(Error::invalid("ball dimension must be >= 1"));
        }
        Ok(InvarianceBall { order, radius, dim })
    }

    /// Ball whose radius makes the identity map exactly feasible:
    /// k = 1 for p = ∞, k = d^(1/p) otherwise (so √d at p = 2, d at p = 1).
    pub fn identity_feasible(order: SchattenOrder, dim: usize) -> Result<Self> {
        Self::new(order, order.identity_norm(dim), dim)
    }

    pub fn order(&self) -> SchattenOrder {
        self.order
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, matrix: &DMatrix<f64>) -> Result<bool> {
        let norm = schatten_norm(matrix, self.order)?;
        Ok(norm <= self.radius * (1.0 + BALL_MEMBERSHIP_SLACK))
    }
}

/// A `d x d` linear map certified to lie inside its invariance ball.
#[derive(Debug, Clone)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
    ball: InvarianceBall,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>, ball: InvarianceBall) -> Result<Self> {
        if matrix.nrows() != ball.dim() || matrix.ncols() != ball.dim() {
            return Err(Error::dims(format!(
                "map is {}x{} but ball has dimension {}",
                matrix.nrows(),
                matrix.ncols(),
                ball.dim()
            )));
        }
        if !ball.contains(&matrix)? {
            let norm = schatten_norm(&matrix, ball.order())?;
            return Err(Error::invalid(format!(
                "map has Schatten-{} norm {norm:.12}, outside ball of radius {:.12}",
                ball.order(),
                ball.radius()
            )));
        }
        Ok(LinearMap { matrix, ball })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn ball(&self) -> &InvarianceBall {
        &self.ball
    }

    pub fn dim(&self) -> usize {
        self.ball.dim()
    }
}

/// Schatten ℓp norm: the ℓp norm of the singular-value vector of `m`.
/// p = 1 is the nuclear norm, p = 2 Frobenius, p = ∞ the spectral norm.
pub fn schatten_norm(m: &DMatrix<f64>, order: SchattenOrder) -> Result<f64> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("matrix contains non-finite entries"));
    }
    let (_, sigma, _) = sorted_svd(m)?;
    Ok(order.vector_norm(&sigma))
}

/// Barycentric image `X Γ`: the source points transported into the target
/// index space according to the coupling.
pub fn barycentric_image(x: &PointSet, gamma: &Coupling) -> Result<DMatrix<f64>> {
    if x.len() != gamma.nrows() {
        return Err(Error::dims(format!(
            "point set has {} columns but coupling has {} rows",
            x.len(),
            gamma.nrows()
        )));
    }
    Ok(x.data() * gamma.gamma())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn histogram_rejects_bad_mass() {
        assert!(Histogram::new(dvector![0.5, 0.4]).is_err());
        assert!(Histogram::new(dvector![0.5, -0.5, 1.0]).is_err());
        assert!(Histogram::new(dvector![0.5, f64::NAN]).is_err());
    }

    #[test]
    fn histogram_renormalizes_within_slack() {
        let h = Histogram::new(dvector![0.5 + 4e-7, 0.5]).unwrap();
        assert_relative_eq!(h.as_vector().sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn schatten_norm_identity_cases() {
        let id3 = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(
            schatten_norm(&id3, SchattenOrder::Infinity).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            schatten_norm(&id3, SchattenOrder::two()).unwrap(),
            3.0_f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn schatten_norm_diagonal_nuclear() {
        // Singular values of a diagonal matrix are the absolute entries.
        let m = dmatrix![3.0, 0.0; 0.0, 4.0];
        assert_relative_eq!(
            schatten_norm(&m, SchattenOrder::one()).unwrap(),
            7.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn schatten_norm_rejects_non_finite() {
        let m = dmatrix![1.0, f64::INFINITY; 0.0, 1.0];
        assert!(schatten_norm(&m, SchattenOrder::two()).is_err());
    }

    #[test]
    fn schatten_order_duals() {
        assert_eq!(SchattenOrder::Infinity.dual(), SchattenOrder::Finite(1.0));
        assert_eq!(SchattenOrder::one().dual(), SchattenOrder::Infinity);
        let q = SchattenOrder::new(2.0).unwrap().dual();
        match q {
            SchattenOrder::Finite(v) => assert_relative_eq!(v, 2.0),
            _ => panic!("dual of 2 must be finite"),
        }
    }

    #[test]
    fn order_near_one_collapses_to_nuclear() {
        assert!(SchattenOrder::new(1.0 + 1e-9).unwrap().is_nuclear());
        assert!(!SchattenOrder::new(1.01).unwrap().is_nuclear());
    }

    #[test]
    fn product_coupling_is_always_feasible() {
        let p = Histogram::uniform(3);
        let q = Histogram::uniform(3);
        let gamma = p.as_vector() * q.as_vector().transpose();
        let (ok, _) = validate_coupling(&gamma, &p, &q, 1e-9).unwrap();
        assert!(ok);
    }

    #[test]
    fn scaled_permutation_has_uniform_marginals() {
        let gamma = DMatrix::<f64>::identity(2, 2) / 2.0;
        let (ok, _) =
            validate_coupling(&gamma, &Histogram::uniform(2), &Histogram::uniform(2), 1e-9)
                .unwrap();
        assert!(ok);
    }

    #[test]
    fn negative_entry_fails_validation() {
        let mut gamma = DMatrix::<f64>::identity(2, 2) / 2.0;
        gamma[(0, 1)] = -1e-3;
        gamma[(0, 0)] = 0.5 + 1e-3;
        let (ok, residual) =
            validate_coupling(&gamma, &Histogram::uniform(2), &Histogram::uniform(2), 1e-9)
                .unwrap();
        assert!(!ok);
        assert!(residual.min_entry < 0.0);
    }

    #[test]
    fn validate_coupling_shape_mismatch() {
        let gamma = DMatrix::<f64>::zeros(2, 3);
        assert!(
            validate_coupling(&gamma, &Histogram::uniform(2), &Histogram::uniform(2), 1e-9)
                .is_err()
        );
    }

    #[test]
    fn default_radii_make_identity_feasible() {
        for (order, expected) in [
            (SchattenOrder::Infinity, 1.0),
            (SchattenOrder::two(), 3.0_f64.sqrt()),
            (SchattenOrder::one(), 3.0),
        ] {
            let ball = InvarianceBall::identity_feasible(order, 3).unwrap();
            assert_relative_eq!(ball.radius(), expected, epsilon = 1e-12);
            assert!(LinearMap::new(DMatrix::identity(3, 3), ball).is_ok());
        }
    }

    #[test]
    fn linear_map_rejects_norm_violation() {
        let ball = InvarianceBall::identity_feasible(SchattenOrder::Infinity, 2).unwrap();
        let m = DMatrix::<f64>::identity(2, 2) * 1.5;
        assert!(LinearMap::new(m, ball).is_err());
    }

    #[test]
    fn barycentric_image_scaled_identity() {
        let x = PointSet::uniform(dmatrix![1.0, 2.0; 3.0, 4.0]).unwrap();
        let gamma = Coupling::new(
            DMatrix::identity(2, 2) / 2.0,
            Histogram::uniform(2),
            Histogram::uniform(2),
        )
        .unwrap();
        let image = barycentric_image(&x, &gamma).unwrap();
        assert_relative_eq!((image - x.data() / 2.0).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn barycentric_image_rank_one() {
        let x = PointSet::uniform(dmatrix![2.0; -1.0]).unwrap();
        let q = dvector![0.25, 0.75];
        let gamma = Coupling::new(
            DMatrix::from_fn(1, 2, |_, j| q[j]),
            Histogram::uniform(1),
            Histogram::new(q.clone()).unwrap(),
        )
        .unwrap();
        let image = barycentric_image(&x, &gamma).unwrap();
        let expected = x.data() * q.transpose();
        assert_relative_eq!((image - expected).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn barycentric_image_matches_triple_loop() {
        // Naive oracle: image[r][j] = sum_i X[r][i] * gamma[i][j].
        let x = dmatrix![
            0.3, -1.2, 0.7, 0.0;
            1.1, 0.4, -0.5, 2.0;
            -0.8, 0.9, 0.2, -1.0
        ];
        let gamma = dmatrix![
            0.10, 0.15;
            0.05, 0.20;
            0.20, 0.05;
            0.15, 0.10
        ];
        let p = Histogram::new(dvector![0.25, 0.25, 0.25, 0.25]).unwrap();
        let q = Histogram::new(dvector![0.5, 0.5]).unwrap();
        let ps = PointSet::new(x.clone(), p.clone()).unwrap();
        let coupling = Coupling::new(gamma.clone(), p, q).unwrap();
        let image = barycentric_image(&ps, &coupling).unwrap();
        for r in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for i in 0..4 {
                    acc += x[(r, i)] * gamma[(i, j)];
                }
                assert_relative_eq!(image[(r, j)], acc, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn schatten_order_parses() {
        assert_eq!(
            "inf".parse::<SchattenOrder>().unwrap(),
            SchattenOrder::Infinity
        );
        assert_eq!(
            "2".parse::<SchattenOrder>().unwrap(),
            SchattenOrder::Finite(2.0)
        );
        assert!("0.5".parse::<SchattenOrder>().is_err());
        assert!("abc".parse::<SchattenOrder>().is_err());
    }
}
