//! Exact (unregularized) transport solvers used as references and baselines:
//! brute-force permutation enumeration at test scale, a transportation
//! simplex for tiny general instances, and a Hungarian assignment solver for
//! square uniform problems up to benchmark sizes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Coupling, Histogram};
use crate::sinkhorn::CostMatrix;

/// Cell cap for [`exact_ot_small`]; keeps enumeration and the dense simplex
/// firmly in test territory.
pub const EXACT_SMALL_MAX_CELLS: usize = 64;

/// Globally optimal coupling for the unregularized transport LP on a tiny
/// instance (`n·m ≤ 64`). Square uniform problems are solved by exhaustive
/// enumeration of permutation couplings (the polytope's extreme points);
/// everything else runs a dense transportation simplex.
pub fn exact_ot_small(cost: &CostMatrix, p: &Histogram, q: &Histogram) -> Result<Coupling> {
    let c = cost.matrix();
    let (n, m) = c.shape();
    if n != p.len() || m != q.len() {
        return Err(Error::dims(format!(
            "cost is {n}x{m} but marginals have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if n * m > EXACT_SMALL_MAX_CELLS {
        return Err(Error::invalid(format!(
            "instance too large for exact_ot_small: {n}x{m} exceeds {EXACT_SMALL_MAX_CELLS} cells"
        )));
    }
    let gamma = if n == m && p.is_uniform() && q.is_uniform() {
        best_permutation_coupling(c)
    } else {
        let (flow, _, _) = transportation_simplex(c, p.as_vector(), q.as_vector())?;
        flow
    };
    Coupling::new(gamma, p.clone(), q.clone())
}

/// Minimum-cost permutation coupling by full enumeration, first optimum in
/// lexicographic order. Only sensible for the tiny sizes the cell cap allows.
fn best_permutation_coupling(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = permutation_cost(c, &perm);
    while next_permutation(&mut perm) {
        let cost = permutation_cost(c, &perm);
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(&perm);
        }
    }
    let mut gamma = DMatrix::zeros(n, n);
    for (i, &j) in best.iter().enumerate() {
        gamma[(i, j)] = 1.0 / n as f64;
    }
    gamma
}

fn permutation_cost(c: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum()
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Dense transportation simplex with lexicographic supply perturbation
/// against degenerate cycling. Returns the optimal flow plus the dual
/// potentials `(u, v)`; the caller can verify optimality from the duals
/// (every reduced cost `c_ij - u_i - v_j` is nonnegative at an optimum).
pub fn transportation_simplex(
    c: &DMatrix<f64>,
    p: &DVector<f64>,
    q: &DVector<f64>,
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let (n, m) = c.shape();
    if n != p.len() || m != q.len() {
        return Err(Error::dims("transportation simplex shape mismatch"));
    }

    // Perturbed marginals keep every basic solution non-degenerate.
    let delta = 1e-11;
    let mut supply: Vec<f64> = p.iter().enumerate().map(|(i, &v)| v + (i + 1) as f64 * delta).collect();
    let mut demand: Vec<f64> = q.iter().cloned().collect();
    let extra: f64 = delta * (n * (n + 1) / 2) as f64;
    demand[m - 1] += extra;

    // Northwest-corner initial basis.
    let mut flow = DMatrix::<f64>::zeros(n, m);
    let mut in_basis = vec![vec![false; m]; n];
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);
    {
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let f = supply[i].min(demand[j]);
            flow[(i, j)] = f;
            in_basis[i][j] = true;
            basis.push((i, j));
            supply[i] -= f;
            demand[j] -= f;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if supply[i] <= demand[j] && i < n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let max_pivots = 2000 * (n + m) * (n + m);
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];
    for _pivot in 0..max_pivots {
        compute_duals(c, &basis, &mut u, &mut v)?;

        // Entering cell: most negative reduced cost, first in scan order.
        let mut enter = None;
        let mut best = -1e-12;
        for i in 0..n {
            for j in 0..m {
                if !in_basis[i][j] {
                    let r = c[(i, j)] - u[i] - v[j];
                    if r < best {
                        best = r;
                        enter = Some((i, j));
                    }
                }
            }
        }
        let (ei, ej) = match enter {
            Some(cell) => cell,
            None => {
                // Optimal basis found; resolve flows against the original
                // (unperturbed) marginals on the basis tree.
                let exact = solve_tree_flows(&basis, p, q, n, m)?;
                return Ok((exact, u, v));
            }
        };

        // The basis is a spanning tree; adding the entering cell closes a
        // unique alternating cycle.
        let path = tree_path(&basis, n, m, ei, ej)?;
        // path alternates (row ei) -> col -> row -> ... -> col ej as node
        // ids; collect cycle cells with signs. Entering cell is a plus.
        let mut minus_cells: Vec<(usize, usize)> = Vec::new();
        let mut plus_cells: Vec<(usize, usize)> = vec![(ei, ej)];
        for (idx, pair) in path.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            let (ri, cj) = if a < n { (a, b - n) } else { (b, a - n) };
            if idx % 2 == 0 {
                minus_cells.push((ri, cj));
            } else {
                plus_cells.push((ri, cj));
            }
        }

        let mut theta = f64::INFINITY;
        let mut leave = minus_cells[0];
        for &(i, j) in &minus_cells {
            if flow[(i, j)] < theta {
                theta = flow[(i, j)];
                leave = (i, j);
            }
        }
        for &(i, j) in &plus_cells {
            flow[(i, j)] += theta;
        }
        for &(i, j) in &minus_cells {
            flow[(i, j)] -= theta;
        }
        flow[leave] = 0.0;
        in_basis[leave.0][leave.1] = false;
        in_basis[ei][ej] = true;
        let pos = basis.iter().position(|&cell| cell == leave).unwrap();
        basis[pos] = (ei, ej);
    }
    Err(Error::numerical(
        "transportation simplex exceeded its pivot budget",
    ))
}

/// Dual potentials from the basis tree: u_i + v_j = c_ij on basic cells.
fn compute_duals(
    c: &DMatrix<f64>,
    basis: &[(usize, usize)],
    u: &mut [f64],
    v: &mut [f64],
) -> Result<()> {
    let n = u.len();
    let m = v.len();
    let mut u_known = vec![false; n];
    let mut v_known = vec![false; m];
    u[0] = 0.0;
    u_known[0] = true;
    let mut progressed = true;
    while progressed {
        progressed = false;
        for &(i, j) in basis {
            if u_known[i] && !v_known[j] {
                v[j] = c[(i, j)] - u[i];
                v_known[j] = true;
                progressed = true;
            } else if v_known[j] && !u_known[i] {
                u[i] = c[(i, j)] - v[j];
                u_known[i] = true;
                progressed = true;
            }
        }
    }
    if u_known.iter().all(|&k| k) && v_known.iter().all(|&k| k) {
        Ok(())
    } else {
        Err(Error::numerical("transportation basis is not a spanning tree"))
    }
}

/// Path from row node `ei` to column node `n + ej` through the basis tree.
/// Nodes 0..n are rows, n..n+m are columns.
fn tree_path(
    basis: &[(usize, usize)],
    n: usize,
    m: usize,
    ei: usize,
    ej: usize,
) -> Result<Vec<usize>> {
    let total = n + m;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); total];
    for &(i, j) in basis {
        adj[i].push(n + j);
        adj[n + j].push(i);
    }
    let target = n + ej;
    let mut parent = vec![usize::MAX; total];
    let mut queue = std::collections::VecDeque::new();
    parent[ei] = ei;
    queue.push_back(ei);
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        for &next in &adj[node] {
            if parent[next] == usize::MAX {
                parent[next] = node;
                queue.push_back(next);
            }
        }
    }
    if parent[target] == usize::MAX {
        return Err(Error::numerical("entering cell closes no cycle"));
    }
    let mut path = vec![target];
    let mut node = target;
    while node != ei {
        node = parent[node];
        path.push(node);
    }
    path.reverse();
    Ok(path)
}

/// Re-solves the basic flows for the optimal basis against the original
/// marginals by leaf elimination over the basis tree, clamping the
/// degenerate entries the perturbation had separated back to zero.
fn solve_tree_flows(
    basis: &[(usize, usize)],
    p: &DVector<f64>,
    q: &DVector<f64>,
    n: usize,
    m: usize,
) -> Result<DMatrix<f64>> {
    let total = n + m;
    let mut degree = vec![0usize; total];
    let mut cell_alive = vec![true; basis.len()];
    for &(i, j) in basis {
        degree[i] += 1;
        degree[n + j] += 1;
    }
    let mut remaining: Vec<f64> = p.iter().cloned().chain(q.iter().cloned()).collect();
    let mut flow = DMatrix::<f64>::zeros(n, m);
    for _round in 0..basis.len() {
        let mut advanced = false;
        for (idx, &(i, j)) in basis.iter().enumerate() {
            if !cell_alive[idx] {
                continue;
            }
            let (leaf, other) = if degree[i] == 1 {
                (i, n + j)
            } else if degree[n + j] == 1 {
                (n + j, i)
            } else {
                continue;
            };
            let f = remaining[leaf];
            flow[(i, j)] = f.max(0.0);
            remaining[other] -= f;
            remaining[leaf] = 0.0;
            degree[leaf] -= 1;
            degree[other] -= 1;
            cell_alive[idx] = false;
            advanced = true;
        }
        if !advanced {
            break;
        }
    }
    if cell_alive.iter().any(|&alive| alive) {
        return Err(Error::numerical("basis tree elimination stalled"));
    }
    Ok(flow)
}

/// Minimum-cost assignment on a square cost matrix via shortest augmenting
/// paths with potentials (Jonker-Volgenant style, O(n³)). Returns, for each
/// row, the column it is assigned to.
pub fn assignment_min_cost(c: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, m) = c.shape();
    if n != m {
        return Err(Error::dims(format!(
            "assignment requires a square cost matrix, got {n}x{m}"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let inf = f64::INFINITY;
    // 1-indexed; col_row[j] = row currently assigned to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut col_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_col = vec![usize::MAX; n];
    for j in 1..=m {
        if col_row[j] != 0 {
            row_col[col_row[j] - 1] = j - 1;
        }
    }
    Ok(row_col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::{sinkhorn_solve, transport_cost, CostKind, SinkhornSettings};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm(c: DMatrix<f64>) -> CostMatrix {
        CostMatrix::new(c, CostKind::SquaredEuclidean).unwrap()
    }

    #[test]
    fn swap_cost_picks_identity() {
        let c = cm(dmatrix![0.0, 1.0; 1.0, 0.0]);
        let p = Histogram::uniform(2);
        let q = Histogram::uniform(2);
        let gamma = exact_ot_small(&c, &p, &q).unwrap();
        assert_relative_eq!(
            (gamma.gamma() - DMatrix::<f64>::identity(2, 2) / 2.0).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(transport_cost(&gamma, &c).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_cost_any_feasible_plan() {
        let c = cm(dmatrix![1.0, 1.0; 1.0, 1.0]);
        let gamma = exact_ot_small(&c, &Histogram::uniform(2), &Histogram::uniform(2)).unwrap();
        assert_relative_eq!(transport_cost(&gamma, &c).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_3x3_matches_permutation_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let c = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>());
            let cost = cm(c.clone());
            let p = Histogram::uniform(3);
            let gamma = exact_ot_small(&cost, &p, &p).unwrap();
            let got = transport_cost(&gamma, &cost).unwrap();
            // Independent oracle: min over the 6 permutations of {0,1,2}.
            let perms: [[usize; 3]; 6] = [
                [0, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            let best = perms
                .iter()
                .map(|perm| perm.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>() / 3.0)
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(got, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_large_instances() {
        let c = cm(DMatrix::zeros(9, 9));
        let p = Histogram::uniform(9);
        assert!(exact_ot_small(&c, &p, &p).is_err());
    }

    #[test]
    fn simplex_matches_enumeration_on_uniform_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 3, 4, 5] {
            for _ in 0..10 {
                let c = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
                let p = DVector::from_element(n, 1.0 / n as f64);
                let (flow, u, v) = transportation_simplex(&c, &p, &p).unwrap();
                let simplex_cost: f64 = flow
                    .iter()
                    .zip(c.iter())
                    .map(|(f, cost)| f * cost)
                    .sum();
                let best = {
                    let mut perm: Vec<usize> = (0..n).collect();
                    let mut best = permutation_cost(&c, &perm) / n as f64;
                    while next_permutation(&mut perm) {
                        best = best.min(permutation_cost(&c, &perm) / n as f64);
                    }
                    best
                };
                assert_relative_eq!(simplex_cost, best, epsilon = 1e-9);
                // Dual feasibility certifies optimality.
                for i in 0..n {
                    for j in 0..n {
                        assert!(c[(i, j)] - u[i] - v[j] >= -1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn simplex_handles_nonuniform_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..25 {
            let n = rng.random_range(2..5usize);
            let m = rng.random_range(2..5usize);
            let c = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>());
            let mut p = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.05);
            let mut q = DVector::from_fn(m, |_, _| rng.random::<f64>() + 0.05);
            p /= p.sum();
            q /= q.sum();
            let (flow, u, v) = transportation_simplex(&c, &p, &q).unwrap();
            for i in 0..n {
                assert_relative_eq!(flow.row(i).sum(), p[i], epsilon = 1e-9);
            }
            for j in 0..m {
                assert_relative_eq!(flow.column(j).sum(), q[j], epsilon = 1e-9);
            }
            assert!(flow.iter().all(|&f| f >= 0.0));
            for i in 0..n {
                for j in 0..m {
                    assert!(
                        c[(i, j)] - u[i] - v[j] >= -1e-9,
                        "dual infeasible at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn exact_ot_small_nonuniform_route() {
        let c = cm(dmatrix![0.2, 0.9; 0.7, 0.1]);
        let p = Histogram::new(dvector![0.3, 0.7]).unwrap();
        let q = Histogram::new(dvector![0.6, 0.4]).unwrap();
        let gamma = exact_ot_small(&c, &p, &q).unwrap();
        // Send as much as possible through the cheap cells (0,0) and (1,1):
        // flow (1,1) = 0.4 exhausts column 2, rest fills column 1.
        let expected = dmatrix![0.3, 0.0; 0.3, 0.4];
        assert_relative_eq!((gamma.gamma() - expected).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [2usize, 3, 5, 7] {
            for _ in 0..8 {
                let c = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
                let assign = assignment_min_cost(&c).unwrap();
                let got: f64 = assign.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum();
                let mut perm: Vec<usize> = (0..n).collect();
                let mut best = permutation_cost(&c, &perm);
                while next_permutation(&mut perm) {
                    best = best.min(permutation_cost(&c, &perm));
                }
                assert_relative_eq!(got, best, epsilon = 1e-10);
                let mut seen = vec![false; n];
                for &j in &assign {
                    assert!(!seen[j], "column {j} assigned twice");
                    seen[j] = true;
                }
            }
        }
    }

    #[test]
    fn sinkhorn_cost_decreases_with_lambda_toward_exact() {
        // Fixed 5x5 instance: the regularized cost is non-increasing as λ
        // shrinks and lands within 1e-3 of the LP optimum at λ = 0.01.
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = StandardNormal;
        let x = DMatrix::from_fn(3, 5, |_, _| normal.sample(&mut rng));
        let y = DMatrix::from_fn(3, 5, |_, _| normal.sample(&mut rng));
        let c = crate::sinkhorn::pairwise_sq_dist(&x, &y).unwrap();
        let p = Histogram::uniform(5);
        let exact = exact_ot_small(&c, &p, &p).unwrap();
        let exact_cost = transport_cost(&exact, &c).unwrap();
        let mut prev = f64::INFINITY;
        let mut last = f64::INFINITY;
        for lambda in [1.0, 0.1, 0.01] {
            let mut s = SinkhornSettings::new(lambda).unwrap();
            s.max_inner_iters = 1_000_000;
            let run = sinkhorn_solve(&c, &p, &p, &s).unwrap();
            assert!(run.converged);
            let cost = transport_cost(&run.coupling, &c).unwrap();
            assert!(cost <= prev + 1e-12, "cost rose from {prev} to {cost}");
            prev = cost;
            last = cost;
        }
        assert!(
            (last - exact_cost).abs() <= 1e-3,
            "sharp Sinkhorn cost {last} vs exact {exact_cost}"
        );
    }
}
