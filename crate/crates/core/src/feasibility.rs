//! Cycle-product checks for candidate connectivity matrices and the
//! permutation/scaling step that normalizes a joint diagonalizer.
//!
//! Edge convention: a nonzero entry `b[(i, j)]` is the directed edge
//! `j -> i` with weight `b[(i, j)]`. The cycle product of a matrix is the
//! maximum over directed simple cycles of the product of absolute edge
//! weights; values below one keep equilibria well defined and make the
//! normalization step unambiguous.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Half-width of the numerical decision band around a cycle product of 1.
const BAND: f64 = 1e-9;

/// Entries smaller than this count as structural zeros when building
/// assignment costs.
const PIVOT_FLOOR: f64 = 1e-12;

/// Largest dimension accepted by exact cycle enumeration by default.
pub const DEFAULT_EXACT_LIMIT: usize = 12;

/// Outcome of a cycle-product check.
#[derive(Debug, Clone)]
pub struct CycleProductReport {
    /// True when every directed simple cycle has absolute weight product
    /// strictly below one (up to the decision band).
    pub feasible: bool,
    /// True when the largest product sits within roughly `1e-9` of one,
    /// where the verdict is numerically ambiguous.
    pub borderline: bool,
    /// Largest product, present only for exact enumeration. Zero when the
    /// graph is acyclic.
    pub exact_value: Option<f64>,
    /// Nodes of a maximizing cycle in traversal order, present only for
    /// exact enumeration on cyclic graphs.
    pub witness_cycle: Option<Vec<usize>>,
}

/// A joint diagonalizer brought to canonical form: unit diagonal, rows
/// permuted so that `I - d_hat` passes the cycle-product check.
#[derive(Debug, Clone)]
pub struct FeasibleDiagonalizer {
    pub d_hat: DMatrix<f64>,
    /// `permutation[k]` is the output row that input row `k` was moved to.
    pub permutation: Vec<usize>,
    /// `row_scales[k]` is the factor applied to input row `k`, the
    /// reciprocal of its pivot entry.
    pub row_scales: Vec<f64>,
}

pub(crate) fn validate_connectivity(b: &DMatrix<f64>) -> Result<usize> {
    if b.nrows() != b.ncols() {
        return Err(Error::ShapeError(format!(
            "connectivity matrix must be square, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let p = b.nrows();
    for k in 0..p {
        if b[(k, k)] != 0.0 {
            return Err(Error::ContractViolation(format!(
                "diagonal entry ({k},{k}) must be zero"
            )));
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::ContractViolation(
            "connectivity matrix contains a non-finite value".into(),
        ));
    }
    Ok(p)
}

fn log_edges(b: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let p = b.nrows();
    let mut edges = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j && b[(i, j)] != 0.0 {
                edges.push((j, i, b[(i, j)].abs().ln()));
            }
        }
    }
    edges
}

/// Bellman-Ford negative-cycle detection from an all-zero start, which
/// acts as a super source connected to every node.
fn has_negative_cycle(p: usize, edges: &[(usize, usize, f64)]) -> bool {
    if edges.is_empty() {
        return false;
    }
    let mut dist = vec![0.0f64; p];
    for pass in 0..p {
        let mut relaxed = false;
        for &(u, v, w) in edges {
            let cand = dist[u] + w;
            if cand < dist[v] {
                dist[v] = cand;
                relaxed = true;
            }
        }
        if !relaxed {
            return false;
        }
        if pass == p - 1 {
            return true;
        }
    }
    false
}

/// Decides whether every directed simple cycle of `b` has absolute weight
/// product below one, without enumerating cycles.
///
/// A cycle with product `>= 1` has log-weight sum `>= 0`; shifting every
/// log weight up by half the decision band and negating turns that into a
/// negative cycle, which Bellman-Ford detects. Products within about
/// `p/2 * 1e-9` of one may land on either side; the `borderline` flag is
/// set when a second, oppositely shifted pass disagrees, meaning no cycle
/// clears one by more than the band.
pub fn cycle_product_feasible(b: &DMatrix<f64>) -> Result<CycleProductReport> {
    let p = validate_connectivity(b)?;
    let logs = log_edges(b);
    let lower: Vec<_> = logs.iter().map(|&(u, v, w)| (u, v, -w - BAND / 2.0)).collect();
    let infeasible = has_negative_cycle(p, &lower);
    let borderline = if infeasible {
        let upper: Vec<_> = logs.iter().map(|&(u, v, w)| (u, v, -w + BAND / 2.0)).collect();
        !has_negative_cycle(p, &upper)
    } else {
        false
    };
    Ok(CycleProductReport {
        feasible: !infeasible,
        borderline,
        exact_value: None,
        witness_cycle: None,
    })
}

struct CycleSearch<'a> {
    adj: &'a [Vec<(usize, f64)>],
    start: usize,
    visited: u64,
    path: Vec<usize>,
    best: f64,
    best_cycle: Option<Vec<usize>>,
}

impl CycleSearch<'_> {
    fn dfs(&mut self, u: usize, product: f64) {
        for &(v, w) in &self.adj[u] {
            if v == self.start {
                let total = product * w;
                if total > self.best {
                    self.best = total;
                    self.best_cycle = Some(self.path.clone());
                }
            } else if v > self.start && self.visited & (1 << v) == 0 {
                self.visited |= 1 << v;
                self.path.push(v);
                self.dfs(v, product * w);
                self.path.pop();
                self.visited &= !(1 << v);
            }
        }
    }
}

/// Enumerates every directed simple cycle and returns the exact maximum
/// product. Exponential in the worst case; refuses dimensions above
/// `limit` (capped at 64).
pub fn cycle_product_exact(b: &DMatrix<f64>, limit: usize) -> Result<CycleProductReport> {
    let p = validate_connectivity(b)?;
    let limit = limit.min(64);
    if p > limit {
        return Err(Error::TooLargeForExact { p, limit });
    }
    let mut adj = vec![Vec::new(); p];
    for i in 0..p {
        for j in 0..p {
            if i != j && b[(i, j)] != 0.0 {
                adj[j].push((i, b[(i, j)].abs()));
            }
        }
    }
    let mut best = 0.0f64;
    let mut best_cycle = None;
    // Each simple cycle is found exactly once, rooted at its minimal node.
    for start in 0..p {
        let mut search = CycleSearch {
            adj: &adj,
            start,
            visited: 1 << start,
            path: vec![start],
            best,
            best_cycle: best_cycle.take(),
        };
        search.dfs(start, 1.0);
        best = search.best;
        best_cycle = search.best_cycle;
    }
    Ok(CycleProductReport {
        feasible: best < 1.0,
        borderline: (best - 1.0).abs() <= BAND,
        exact_value: Some(best),
        witness_cycle: best_cycle,
    })
}

/// Solves the square linear assignment problem, minimizing total cost.
/// Returns `sigma` with `sigma[row] = column`. Entries may be `+inf` to
/// forbid a pairing; if no finite-cost perfect assignment exists the
/// result is `Error::Infeasible`.
pub fn lap_solve(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    if cost.nrows() != cost.ncols() {
        return Err(Error::ShapeError(format!(
            "cost matrix must be square, got {}x{}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    if cost.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(Error::ContractViolation(
            "cost entries must not be NaN or -inf".into(),
        ));
    }
    let n = cost.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // Potential-based shortest augmenting path method, 1-indexed with
    // column 0 as the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = None;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = Some(j);
                    }
                }
            }
            let Some(next) = j1 else {
                return Err(Error::Infeasible);
            };
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = next;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0usize; n];
    for j in 1..=n {
        sigma[assigned_row[j] - 1] = j - 1;
    }
    Ok(sigma)
}

/// Brings a joint diagonalizer to canonical form.
///
/// Picks the row permutation maximizing the product of absolute diagonal
/// entries (entries below `1e-12` are treated as zero and forbidden),
/// rescales each row by its pivot so the diagonal becomes one, and
/// verifies that `I - d_hat` passes the cycle-product check. For a valid
/// input that is a row-scaled, row-permuted image of some unit-diagonal
/// matrix with feasible cycle products, this recovers that matrix exactly
/// and is idempotent.
pub fn permute_and_scale(d_tilde: &DMatrix<f64>) -> Result<FeasibleDiagonalizer> {
    if d_tilde.nrows() != d_tilde.ncols() {
        return Err(Error::ShapeError(format!(
            "diagonalizer must be square, got {}x{}",
            d_tilde.nrows(),
            d_tilde.ncols()
        )));
    }
    if d_tilde.iter().any(|x| !x.is_finite()) {
        return Err(Error::ContractViolation(
            "diagonalizer contains a non-finite value".into(),
        ));
    }
    let p = d_tilde.nrows();
    let cost = DMatrix::from_fn(p, p, |k, l| {
        let a = d_tilde[(k, l)].abs();
        if a < PIVOT_FLOOR {
            f64::INFINITY
        } else {
            -a.ln()
        }
    });
    let permutation = match lap_solve(&cost) {
        Ok(sigma) => sigma,
        Err(Error::Infeasible) => {
            return Err(Error::ModelAssumptionsViolated(
                "no row permutation yields a nonzero diagonal".into(),
            ))
        }
        Err(e) => return Err(e),
    };
    let mut d_hat = DMatrix::zeros(p, p);
    let mut row_scales = vec![0.0f64; p];
    for k in 0..p {
        let dest = permutation[k];
        let pivot = d_tilde[(k, dest)];
        row_scales[k] = 1.0 / pivot;
        for l in 0..p {
            d_hat[(dest, l)] = d_tilde[(k, l)] / pivot;
        }
    }
    let b_check = DMatrix::identity(p, p) - &d_hat;
    let report = cycle_product_feasible(&b_check)?;
    if !report.feasible {
        let detail = if report.borderline {
            "cycle product of the normalized estimate is at the feasibility boundary"
        } else {
            "cycle product of the normalized estimate is not below one"
        };
        return Err(Error::ModelAssumptionsViolated(detail.into()));
    }
    Ok(FeasibleDiagonalizer {
        d_hat,
        permutation,
        row_scales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_edges(p: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(p, p);
        for &(from, to, w) in edges {
            b[(to, from)] = w;
        }
        b
    }

    struct Lcg(u64);

    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn acyclic_graph_is_feasible_with_zero_product() {
        let b = from_edges(4, &[(0, 1, 0.9), (1, 2, 1.5), (2, 3, -2.0)]);
        let fast = cycle_product_feasible(&b).unwrap();
        assert!(fast.feasible);
        assert!(!fast.borderline);
        let exact = cycle_product_exact(&b, DEFAULT_EXACT_LIMIT).unwrap();
        assert!(exact.feasible);
        assert_eq!(exact.exact_value, Some(0.0));
        assert!(exact.witness_cycle.is_none());
    }

    #[test]
    fn two_cycle_products() {
        // 0.9 * 1.1 = 0.99 < 1.
        let ok = from_edges(2, &[(0, 1, 0.9), (1, 0, -1.1)]);
        assert!(cycle_product_feasible(&ok).unwrap().feasible);
        let exact = cycle_product_exact(&ok, 12).unwrap();
        assert!((exact.exact_value.unwrap() - 0.99).abs() < 1e-12);
        // 0.9 * 1.2 = 1.08 >= 1.
        let bad = from_edges(2, &[(0, 1, 0.9), (1, 0, 1.2)]);
        let r = cycle_product_feasible(&bad).unwrap();
        assert!(!r.feasible);
        assert!(!r.borderline);
        let exact = cycle_product_exact(&bad, 12).unwrap();
        assert!(!exact.feasible);
        assert!((exact.exact_value.unwrap() - 1.08).abs() < 1e-12);
        assert_eq!(exact.witness_cycle.as_deref(), Some(&[0, 1][..]));
    }

    #[test]
    fn product_exactly_one_is_infeasible_and_borderline() {
        let b = from_edges(2, &[(0, 1, 2.0), (1, 0, 0.5)]);
        let r = cycle_product_feasible(&b).unwrap();
        assert!(!r.feasible);
        assert!(r.borderline);
        let exact = cycle_product_exact(&b, 12).unwrap();
        assert!(exact.borderline);
    }

    #[test]
    fn longest_cycle_dominates() {
        // Triangle product 1.002 beats the embedded 2-cycle product 0.5.
        let b = from_edges(
            3,
            &[(0, 1, 1.2), (1, 2, 1.0), (2, 0, 0.835), (1, 0, 0.5 / 1.2)],
        );
        let exact = cycle_product_exact(&b, 12).unwrap();
        assert!((exact.exact_value.unwrap() - 1.002).abs() < 1e-9);
        assert!(!exact.feasible);
        assert!(!cycle_product_feasible(&b).unwrap().feasible);
        assert_eq!(exact.witness_cycle.as_deref(), Some(&[0, 1, 2][..]));
    }

    #[test]
    fn nonzero_diagonal_is_rejected() {
        let mut b = DMatrix::zeros(3, 3);
        b[(1, 1)] = 0.2;
        assert!(matches!(
            cycle_product_feasible(&b),
            Err(Error::ContractViolation(_))
        ));
        assert!(matches!(
            cycle_product_exact(&b, 12),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn exact_respects_size_limit() {
        let b = DMatrix::zeros(13, 13);
        assert!(matches!(
            cycle_product_exact(&b, 12),
            Err(Error::TooLargeForExact { p: 13, limit: 12 })
        ));
    }

    #[test]
    fn fast_and_exact_agree_on_random_graphs() {
        let mut rng = Lcg(42);
        for p in 2..=7 {
            for _ in 0..60 {
                let mut b = DMatrix::zeros(p, p);
                for i in 0..p {
                    for j in 0..p {
                        if i != j && rng.next_f64() < 0.4 {
                            let mag = 0.2 + 1.3 * rng.next_f64();
                            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
                            b[(i, j)] = sign * mag;
                        }
                    }
                }
                let exact = cycle_product_exact(&b, 12).unwrap();
                if exact.borderline {
                    continue;
                }
                let fast = cycle_product_feasible(&b).unwrap();
                assert_eq!(
                    fast.feasible, exact.feasible,
                    "disagreement at value {:?}",
                    exact.exact_value
                );
            }
        }
    }

    #[test]
    fn witness_cycle_product_matches_reported_value() {
        let mut rng = Lcg(7);
        for _ in 0..40 {
            let p = 6;
            let mut b = DMatrix::zeros(p, p);
            for i in 0..p {
                for j in 0..p {
                    if i != j && rng.next_f64() < 0.5 {
                        b[(i, j)] = 0.1 + rng.next_f64();
                    }
                }
            }
            let exact = cycle_product_exact(&b, 12).unwrap();
            let Some(cycle) = exact.witness_cycle else {
                continue;
            };
            let mut prod = 1.0;
            for (idx, &u) in cycle.iter().enumerate() {
                let v = cycle[(idx + 1) % cycle.len()];
                let w = b[(v, u)];
                assert!(w != 0.0, "witness uses a missing edge {u}->{v}");
                prod *= w.abs();
            }
            assert!((prod - exact.exact_value.unwrap()).abs() < 1e-12);
        }
    }

    /// Brute-force minimum over all permutations, used as an oracle.
    fn brute_force_lap(cost: &DMatrix<f64>) -> Option<(f64, Vec<usize>)> {
        let n = cost.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        fn total(cost: &DMatrix<f64>, perm: &[usize]) -> f64 {
            perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
        }
        fn heap(
            k: usize,
            perm: &mut Vec<usize>,
            cost: &DMatrix<f64>,
            best: &mut Option<(f64, Vec<usize>)>,
        ) {
            if k == 1 {
                let t = total(cost, perm);
                if t.is_finite() && best.as_ref().map_or(true, |(b, _)| t < *b) {
                    *best = Some((t, perm.clone()));
                }
                return;
            }
            for i in 0..k {
                heap(k - 1, perm, cost, best);
                if k % 2 == 0 {
                    perm.swap(i, k - 1);
                } else {
                    perm.swap(0, k - 1);
                }
            }
        }
        if n == 0 {
            return Some((0.0, vec![]));
        }
        heap(n, &mut perm, cost, &mut best);
        best
    }

    #[test]
    fn lap_matches_brute_force() {
        let mut rng = Lcg(99);
        for n in 1..=6 {
            for round in 0..25 {
                let mut cost = DMatrix::from_fn(n, n, |_, _| rng.next_f64() * 10.0 - 2.0);
                // Sprinkle forbidden pairings on some rounds.
                if round % 3 == 0 {
                    for i in 0..n {
                        for j in 0..n {
                            if rng.next_f64() < 0.2 {
                                cost[(i, j)] = f64::INFINITY;
                            }
                        }
                    }
                }
                let oracle = brute_force_lap(&cost);
                match lap_solve(&cost) {
                    Ok(sigma) => {
                        let (best, _) = oracle.expect("solver found assignment, oracle none");
                        let got: f64 = sigma.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
                        assert!(got.is_finite());
                        assert!((got - best).abs() < 1e-9, "cost {got} vs oracle {best}");
                        let mut seen = vec![false; n];
                        for &j in &sigma {
                            assert!(!seen[j]);
                            seen[j] = true;
                        }
                    }
                    Err(Error::Infeasible) => {
                        assert!(oracle.is_none(), "oracle found assignment, solver did not");
                    }
                    Err(e) => panic!("unexpected error {e}"),
                }
            }
        }
    }

    #[test]
    fn lap_all_infinite_row_is_infeasible() {
        let mut cost = DMatrix::from_element(4, 4, 1.0);
        for j in 0..4 {
            cost[(2, j)] = f64::INFINITY;
        }
        assert!(matches!(lap_solve(&cost), Err(Error::Infeasible)));
    }

    #[test]
    fn lap_infinity_forces_the_unique_finite_assignment() {
        // Only the anti-diagonal is finite.
        let n = 5;
        let cost = DMatrix::from_fn(n, n, |i, j| {
            if i + j == n - 1 {
                1.0
            } else {
                f64::INFINITY
            }
        });
        let sigma = lap_solve(&cost).unwrap();
        for (i, &j) in sigma.iter().enumerate() {
            assert_eq!(i + j, n - 1);
        }
    }

    fn random_valid_unit_diag(p: usize, rng: &mut Lcg) -> DMatrix<f64> {
        // Off-diagonal magnitudes capped below 0.9 so every cycle product
        // is at most 0.81.
        DMatrix::from_fn(p, p, |k, l| {
            if k == l {
                1.0
            } else if rng.next_f64() < 0.5 {
                let mag = 0.05 + 0.8 * rng.next_f64();
                if rng.next_f64() < 0.5 {
                    -mag
                } else {
                    mag
                }
            } else {
                0.0
            }
        })
    }

    #[test]
    fn permute_and_scale_recovers_scrambled_input() {
        let mut rng = Lcg(2024);
        for _ in 0..50 {
            let p = 2 + (rng.next_f64() * 5.0) as usize;
            let d = random_valid_unit_diag(p, &mut rng);
            // Random row permutation and nonzero row scales.
            let mut perm: Vec<usize> = (0..p).collect();
            for k in (1..p).rev() {
                let swap = (rng.next_f64() * (k + 1) as f64) as usize;
                perm.swap(k, swap);
            }
            let mut scrambled = DMatrix::zeros(p, p);
            for k in 0..p {
                let s = (0.5 + 1.5 * rng.next_f64()) * if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
                for l in 0..p {
                    scrambled[(perm[k], l)] = s * d[(k, l)];
                }
            }
            let fd = permute_and_scale(&scrambled).unwrap();
            let err = (&fd.d_hat - &d).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-12, "recovery error {err}");
        }
    }

    #[test]
    fn permute_and_scale_is_idempotent() {
        let mut rng = Lcg(555);
        for _ in 0..20 {
            let d = random_valid_unit_diag(5, &mut rng);
            let once = permute_and_scale(&d).unwrap();
            assert_eq!(once.permutation, vec![0, 1, 2, 3, 4]);
            assert!(once.row_scales.iter().all(|&s| s == 1.0));
            let twice = permute_and_scale(&once.d_hat).unwrap();
            assert_eq!(once.d_hat, twice.d_hat);
            for k in 0..5 {
                assert_eq!(once.d_hat[(k, k)], 1.0);
            }
        }
    }

    #[test]
    fn permute_and_scale_rejects_zero_column() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            permute_and_scale(&d),
            Err(Error::ModelAssumptionsViolated(_))
        ));
    }

    #[test]
    fn permute_and_scale_rejects_tied_assignment() {
        // Both permutations give the same diagonal product, so whichever
        // is picked leaves a cycle product of exactly one.
        let d = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            permute_and_scale(&d),
            Err(Error::ModelAssumptionsViolated(_))
        ));
    }
}
