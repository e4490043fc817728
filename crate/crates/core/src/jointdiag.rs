//! Joint approximate diagonalization of a family of symmetric matrices
//! by a single non-orthogonal transform.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Determinant floor for the per-pair 2x2 systems; below it the pair's
/// update is skipped for the iteration.
const PAIR_DET_FLOOR: f64 = 1e-12;

/// Relative determinant floor signalling that the accumulated transform
/// has degenerated.
const SINGULARITY_FLOOR: f64 = 1e-12;

/// Maximum number of step halvings before an iteration is declared
/// stalled.
const MAX_HALVINGS: usize = 20;

/// Stationarity floor: the iterate counts as stationary when the norm of
/// the loss gradient (in the multiplicative parameter) falls below this
/// fraction of the family's squared Frobenius scale, which is the
/// gradient's own natural scale.
const GRAD_FLOOR_REL: f64 = 1e-12;

/// Relative loss decrease below which a step counts as weak progress and
/// alternative directions are consulted.
const WEAK_PROGRESS: f64 = 1e-2;

/// Update-norm level below which the undamped multiplicative iteration
/// counts as settled.
const FIXED_POINT_TOL: f64 = 1e-9;

/// Iteration budget for the settling check. Families with a genuine
/// joint diagonalizer capture the undamped iteration almost immediately
/// and settle in well under half of this budget; unstructured families
/// reach an accidental zero of the update map only after hundreds of
/// iterations of wandering, if ever.
const FIXED_POINT_BUDGET: usize = 64;

#[derive(Debug, Clone)]
pub struct DiagOptions {
    /// Relative decrease of the loss below which iteration stops.
    pub tol: f64,
    /// Iteration cap; exhausting it yields `converged = false`.
    pub max_iter: usize,
    /// Frobenius-norm bound on each multiplicative update.
    pub step_bound: f64,
    /// Declare convergence only when the undamped update map also
    /// settles on the family, so a stationary loss on a structureless
    /// family does not count. Off by default: a plain optimization run
    /// accepts any stationary point. Estimation turns this on, because
    /// there a sound result requires evidence that the family really
    /// shares a diagonalizer.
    pub require_settling: bool,
}

impl Default for DiagOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            step_bound: 0.9,
            require_settling: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalizerResult {
    /// The accumulated transform; rows are determined only up to
    /// permutation and scaling.
    pub d_tilde: DMatrix<f64>,
    /// Off-diagonal loss at the final iterate.
    pub final_loss: f64,
    /// Completed iterations.
    pub iterations: usize,
    /// True when the last relative loss decrease dropped below `tol`;
    /// with `require_settling` additionally only when the undamped
    /// update map settles on this family, so the stationary point
    /// reflects joint structure rather than a noise-shaped local
    /// minimum. False on iteration exhaustion or a stalled line search.
    pub converged: bool,
    /// Loss after each iteration, starting with the initial loss.
    pub loss_trace: Vec<f64>,
}

fn validate_family(mats: &[DMatrix<f64>]) -> Result<usize> {
    if mats.len() < 2 {
        return Err(Error::NeedMultipleEnvironments);
    }
    let p = mats[0].nrows();
    for (j, m) in mats.iter().enumerate() {
        if m.nrows() != p || m.ncols() != p {
            return Err(Error::ShapeError(format!(
                "matrix {j} is {}x{}, expected {p}x{p}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::ContractViolation(format!(
                "matrix {j} contains a non-finite value"
            )));
        }
    }
    Ok(p)
}

fn sum_offdiag_squares(c: &DMatrix<f64>) -> f64 {
    let p = c.nrows();
    let mut acc = 0.0;
    for k in 0..p {
        for l in 0..p {
            if k != l {
                acc += c[(k, l)] * c[(k, l)];
            }
        }
    }
    acc
}

/// Sum over the family of squared off-diagonal entries of `d * m * d'`.
pub fn offdiag_loss(mats: &[DMatrix<f64>], d: &DMatrix<f64>) -> Result<f64> {
    let p = validate_family(mats)?;
    if d.nrows() != p || d.ncols() != p {
        return Err(Error::ShapeError(format!(
            "transform is {}x{}, expected {p}x{p}",
            d.nrows(),
            d.ncols()
        )));
    }
    Ok(mats
        .iter()
        .map(|m| sum_offdiag_squares(&(d * m * d.transpose())))
        .sum())
}

fn transformed(mats: &[DMatrix<f64>], d: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    mats.iter().map(|m| d * m * d.transpose()).collect()
}

/// Zero-diagonal update W from the pair-decoupled first-order model: for
/// every index pair, the 2x2 system that zeroes the linearized
/// off-diagonal residual. Pairs whose system is near singular are left
/// at zero.
fn pair_update(c: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = c[0].nrows();
    let mut z = DMatrix::<f64>::zeros(p, p);
    let mut y = DMatrix::<f64>::zeros(p, p);
    for cj in c {
        for k in 0..p {
            let dk = cj[(k, k)];
            for l in 0..p {
                z[(k, l)] += dk * cj[(l, l)];
                y[(k, l)] += cj[(l, l)] * cj[(k, l)];
            }
        }
    }
    let mut w = DMatrix::<f64>::zeros(p, p);
    for k in 0..p {
        for l in (k + 1)..p {
            let det = z[(k, k)] * z[(l, l)] - z[(k, l)] * z[(k, l)];
            if det.abs() < PAIR_DET_FLOOR {
                continue;
            }
            w[(k, l)] = (z[(k, l)] * y[(l, k)] - z[(k, k)] * y[(k, l)]) / det;
            w[(l, k)] = (z[(k, l)] * y[(k, l)] - z[(l, l)] * y[(l, k)]) / det;
        }
    }
    w
}

/// Runs the undamped multiplicative iteration (pair update applied at
/// full step, no backtracking) and reports whether its update vanishes
/// within a short iteration budget. Near a family that actually admits a
/// joint diagonalizer the update map is attracting and the norm collapses
/// quickly; on families whose apparent structure is sampling noise the
/// map keeps wandering even where the loss surface has local minima, so
/// a promptly vanishing update is evidence of real structure and not
/// just of a stationary loss.
fn fixed_point_settles(mats: &[DMatrix<f64>], opts: &DiagOptions) -> bool {
    let p = mats[0].nrows();
    let mut c: Vec<DMatrix<f64>> = mats.to_vec();
    for _ in 0..FIXED_POINT_BUDGET {
        let mut w = pair_update(&c);
        let w_norm = w.norm();
        if !w_norm.is_finite() {
            return false;
        }
        if w_norm < FIXED_POINT_TOL {
            return true;
        }
        if w_norm > opts.step_bound {
            w *= opts.step_bound / w_norm;
        }
        let u = DMatrix::identity(p, p) + &w;
        for cj in c.iter_mut() {
            *cj = &u * &*cj * u.transpose();
        }
        if c.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return false;
        }
    }
    false
}

fn row_norm_product(d: &DMatrix<f64>) -> f64 {
    (0..d.nrows()).map(|k| d.row(k).norm()).product()
}

/// Directions from the full first-order model: minimize the linearized
/// off-diagonal residual over all zero-diagonal updates jointly, instead
/// of the pair-decoupled approximation. Returns the normal equations so
/// callers can re-solve with increasing ridge strength, which trades the
/// step toward the gradient when the undamped step overshoots.
fn gauss_newton_system(c: &[DMatrix<f64>]) -> (DMatrix<f64>, nalgebra::DVector<f64>) {
    let p = c[0].nrows();
    let m = p * (p - 1);
    // Off-diagonal (a, b), a != b, packed row-major.
    let param = |a: usize, b: usize| -> usize { a * (p - 1) + if b > a { b - 1 } else { b } };
    let mut normal = DMatrix::<f64>::zeros(m, m);
    let mut rhs = nalgebra::DVector::<f64>::zeros(m);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * p);
    for cj in c {
        for k in 0..p {
            for l in 0..p {
                if k == l {
                    continue;
                }
                // Residual C[k,l]; its derivative w.r.t. W[k,b] is C[b,l],
                // and w.r.t. W[l,b] is C[k,b].
                let r = cj[(k, l)];
                entries.clear();
                for b in 0..p {
                    if b != k {
                        entries.push((param(k, b), cj[(b, l)]));
                    }
                    if b != l {
                        entries.push((param(l, b), cj[(k, b)]));
                    }
                }
                for &(u, vu) in &entries {
                    rhs[u] -= vu * r;
                    for &(v, vv) in &entries {
                        normal[(u, v)] += vu * vv;
                    }
                }
            }
        }
    }
    (normal, rhs)
}

fn solve_damped(
    normal: &DMatrix<f64>,
    rhs: &nalgebra::DVector<f64>,
    ridge: f64,
    p: usize,
) -> Option<DMatrix<f64>> {
    let param = |a: usize, b: usize| -> usize { a * (p - 1) + if b > a { b - 1 } else { b } };
    let mut damped = normal.clone();
    for i in 0..damped.nrows() {
        damped[(i, i)] += ridge;
    }
    let solution = damped.cholesky()?.solve(rhs);
    let mut w = DMatrix::<f64>::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            if a != b {
                w[(a, b)] = solution[param(a, b)];
            }
        }
    }
    Some(w)
}

fn line_search(
    mats: &[DMatrix<f64>],
    d: &DMatrix<f64>,
    loss: f64,
    w: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, Vec<DMatrix<f64>>, f64)> {
    let p = d.nrows();
    let mut step = 1.0f64;
    for _ in 0..=MAX_HALVINGS {
        let d_try = (DMatrix::identity(p, p) + w * step) * d;
        let c_try = transformed(mats, &d_try);
        let loss_try = c_try.iter().map(sum_offdiag_squares).sum::<f64>();
        if loss_try.is_finite() && loss_try <= loss {
            return Some((d_try, c_try, loss_try));
        }
        step *= 0.5;
    }
    None
}

/// Finds a single transform that makes every matrix in the family as
/// diagonal as possible, by minimizing the summed squared off-diagonal
/// entries of `D * M_j * D'`.
///
/// Each iteration solves, for every index pair, the 2x2 linear system
/// that zeroes the first-order off-diagonal residual, assembles the
/// solutions into a multiplicative update `D <- (I + W) * D`, and
/// backtracks on the step length until the loss does not increase. The
/// pair update models the family as nearly diagonal; far from that
/// regime it may point uphill at every step length, in which case the
/// iteration retries along the exact loss gradient before declaring a
/// stall. Starting point is the identity.
pub fn joint_diagonalize(mats: &[DMatrix<f64>], opts: &DiagOptions) -> Result<DiagonalizerResult> {
    let p = validate_family(mats)?;
    let mats: Vec<DMatrix<f64>> = mats
        .iter()
        .map(|m| {
            let mut s = m.clone();
            // Enforce exact symmetry so the pair statistics see one value
            // per unordered pair.
            for k in 0..p {
                for l in (k + 1)..p {
                    let avg = 0.5 * (s[(k, l)] + s[(l, k)]);
                    s[(k, l)] = avg;
                    s[(l, k)] = avg;
                }
            }
            s
        })
        .collect();

    let mut d = DMatrix::<f64>::identity(p, p);
    let mut c = mats.clone();
    let mut loss = c.iter().map(sum_offdiag_squares).sum::<f64>();
    let mut trace = vec![loss];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        // Gradient of the loss in the multiplicative parameter, restricted
        // to zero diagonal, up to a constant factor. Its natural scale is
        // the family's squared Frobenius norm.
        let mut grad = DMatrix::<f64>::zeros(p, p);
        let mut family_scale = 0.0f64;
        for cj in &c {
            family_scale += cj.norm_squared();
            let mut offdiag = cj.clone();
            for k in 0..p {
                offdiag[(k, k)] = 0.0;
            }
            grad += offdiag * cj;
        }
        for k in 0..p {
            grad[(k, k)] = 0.0;
        }
        let grad_norm = grad.norm();
        if grad_norm <= GRAD_FLOOR_REL * family_scale.max(f64::MIN_POSITIVE) {
            // Stationary within numerical resolution: record a zero step
            // so the run ends with a relative change of zero.
            trace.push(loss);
            iterations += 1;
            converged = true;
            break;
        }

        let mut w = pair_update(&c);
        let w_norm = w.norm();
        if w_norm > opts.step_bound {
            w *= opts.step_bound / w_norm;
        }

        let mut accepted = if w_norm > 0.0 {
            line_search(&mats, &d, loss, &w)
        } else {
            None
        };
        // When the pair step makes little headway, consult the full
        // first-order model at several damping strengths and keep the
        // best candidate.
        let progress = accepted
            .as_ref()
            .map_or(0.0, |(_, _, l)| (loss - l) / loss.max(f64::MIN_POSITIVE));
        if progress < WEAK_PROGRESS {
            let (normal, rhs) = gauss_newton_system(&c);
            let base = 1e-10 * normal.diagonal().amax().max(f64::MIN_POSITIVE);
            for ridge_scale in [1.0, 1e3, 1e6, 1e9] {
                let Some(mut gn) = solve_damped(&normal, &rhs, base * ridge_scale, p) else {
                    continue;
                };
                let gn_norm = gn.norm();
                if gn_norm == 0.0 {
                    continue;
                }
                if gn_norm > opts.step_bound {
                    gn *= opts.step_bound / gn_norm;
                }
                if let Some(cand) = line_search(&mats, &d, loss, &gn) {
                    let better = accepted.as_ref().map_or(true, |(_, _, l)| cand.2 < *l);
                    if better {
                        accepted = Some(cand);
                    }
                    if (loss - accepted.as_ref().unwrap().2) / loss.max(f64::MIN_POSITIVE)
                        >= WEAK_PROGRESS
                    {
                        break;
                    }
                }
            }
        }
        if accepted.is_none() {
            let fallback = &grad * (-opts.step_bound / grad_norm);
            accepted = line_search(&mats, &d, loss, &fallback);
        }
        let Some((d_next, c_next, loss_next)) = accepted else {
            // Stalled: neither direction decreases the loss at any step.
            break;
        };

        if d_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown(
                "transform left the space of finite matrices".into(),
            ));
        }
        let det = d_next.determinant().abs();
        if det < SINGULARITY_FLOOR * row_norm_product(&d_next).max(f64::MIN_POSITIVE) {
            return Err(Error::NumericalBreakdown(
                "transform became numerically singular".into(),
            ));
        }

        let rel = if loss > 0.0 {
            (loss - loss_next) / loss
        } else {
            0.0
        };
        d = d_next;
        c = c_next;
        loss = loss_next;
        trace.push(loss);
        iterations += 1;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }

    // A stationary loss alone is not proof of joint structure; when
    // asked, require that the undamped update map also settles.
    if converged && loss > 0.0 && opts.require_settling {
        converged = fixed_point_settles(&mats, opts);
    }

    Ok(DiagonalizerResult {
        d_tilde: d,
        final_loss: loss,
        iterations,
        converged,
        loss_trace: trace,
    })
}
