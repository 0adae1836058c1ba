//! Closed-form maximization of `⟨P, M⟩` over a Schatten-norm ball, plus
//! feasible random initialization.
//!
//! With `M = U diag(σ) Vᵀ`, the maximizer over `{‖P‖_p ≤ k}` is
//! `P = U diag(s) Vᵀ` where the spectrum `s` solves the vector problem
//! `max ⟨s, σ⟩ s.t. ‖s‖_p ≤ k`, attained at `s_i ∝ σ_i^(q-1)` for the dual
//! exponent `q`. The optimal value is `k‖σ‖_q`. Special cases: p = ∞ gives
//! the orthogonal Procrustes solution `k·UVᵀ`; p = 1 concentrates the whole
//! budget on the leading singular direction.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_inner, sorted_svd};
use crate::model::{InvarianceBall, LinearMap, SchattenOrder};

/// Singular values at or below this relative size (vs the largest) are
/// treated as ties when the p = 1 branch picks its leading index.
const TIE_REL_TOL: f64 = 1e-12;

/// The spectral maximizer of `⟨P, M⟩` over an invariance ball, with its
/// optimality data: σ(M), the chosen spectrum `s`, and the attained value
/// `k‖σ‖_q = ⟨P, M⟩`.
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    pub map: LinearMap,
    pub singular_values: DVector<f64>,
    pub spectrum: DVector<f64>,
    pub optimal_value: f64,
    /// Set when `M = 0`: every feasible map is optimal and a scaled identity
    /// is returned by convention.
    pub degenerate: bool,
}

/// Dual-norm value `‖σ‖_q` for `q = p/(p-1)` (with `1 ↔ ∞`).
pub fn dual_norm_value(sigma: &DVector<f64>, order: SchattenOrder) -> f64 {
    order.dual().vector_norm(sigma)
}

/// Solves `argmax {⟨P, M⟩ : ‖P‖_p ≤ k}` in closed form from the SVD of `M`.
pub fn optimal_map_in_ball(m: &DMatrix<f64>, ball: &InvarianceBall) -> Result<SpectralSolution> {
    let d = ball.dim();
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::dims(format!(
            "matrix is {}x{} but ball has dimension {d}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("matrix contains non-finite entries"));
    }
    let k = ball.radius();
    let (u, sigma, v_t) = sorted_svd(m)?;

    if sigma.max() == 0.0 {
        // M = 0: the objective is identically zero, return the scaled
        // identity as the canonical feasible point.
        let scale = k / ball.order().identity_norm(d);
        let map = LinearMap::new(DMatrix::identity(d, d) * scale, *ball)?;
        return Ok(SpectralSolution {
            map,
            singular_values: sigma,
            spectrum: DVector::from_element(d, scale),
            optimal_value: 0.0,
            degenerate: true,
        });
    }

    let spectrum = optimal_spectrum(&sigma, ball.order(), k);
    let p_mat = &u * DMatrix::from_diagonal(&spectrum) * &v_t;
    let optimal_value = frobenius_inner(&p_mat, m);
    let map = LinearMap::new(p_mat, *ball)?;
    Ok(SpectralSolution {
        map,
        singular_values: sigma,
        spectrum,
        optimal_value,
        degenerate: false,
    })
}

/// The spectrum maximizing `⟨s, σ⟩` over `‖s‖_p ≤ k` for a nonzero σ.
fn optimal_spectrum(sigma: &DVector<f64>, order: SchattenOrder, k: f64) -> DVector<f64> {
    let d = sigma.len();
    match order {
        SchattenOrder::Infinity => DVector::from_element(d, k),
        _ if order.is_nuclear() => {
            // σ is sorted descending; ties within TIE_REL_TOL of the top all
            // collapse onto the first index for reproducibility.
            let mut s = DVector::zeros(d);
            s[0] = k;
            s
        }
        SchattenOrder::Finite(p) => {
            let q = p / (p - 1.0);
            let peak = sigma.max();
            // Work with σ/σ_max so σ^(q-1) cannot overflow for q near 1's
            // dual (large exponents).
            let w = DVector::from_fn(d, |i, _| (sigma[i] / peak).powf(q - 1.0));
            let norm = order.vector_norm(&w);
            w * (k / norm)
        }
    }
}

/// A map drawn uniformly-in-spirit on the sphere of the ball: a Gaussian
/// matrix with its spectrum rescaled to `s = k σ/‖σ‖_p`. Deterministic for a
/// fixed seed.
pub fn random_feasible_map(dim: usize, ball: &InvarianceBall, seed: u64) -> Result<LinearMap> {
    if dim != ball.dim() {
        return Err(Error::dims(format!(
            "requested dimension {dim} but ball has dimension {}",
            ball.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_feasible_map_with(&mut rng, ball)
}

/// As [`random_feasible_map`] but drawing from a caller-owned generator.
pub fn random_feasible_map_with(rng: &mut ChaCha8Rng, ball: &InvarianceBall) -> Result<LinearMap> {
    let d = ball.dim();
    let normal = StandardNormal;
    let gaussian = DMatrix::from_fn(d, d, |_, _| normal.sample(rng));
    let (u, sigma, v_t) = sorted_svd(&gaussian)?;
    let norm = ball.order().vector_norm(&sigma);
    let spectrum = sigma * (ball.radius() / norm);
    let p_mat = &u * DMatrix::from_diagonal(&spectrum) * &v_t;
    LinearMap::new(p_mat, *ball)
}

/// The orthogonal factor `UVᵀ` of a Gaussian matrix: an exactly orthogonal
/// (rotation or reflection) map, Haar-like. Used for planting rigid
/// transformations and for invariance tests.
pub fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let normal = StandardNormal;
    let gaussian = DMatrix::from_fn(dim, dim, |_, _| normal.sample(rng));
    let (u, _, v_t) = sorted_svd(&gaussian)?;
    Ok(u * v_t)
}
