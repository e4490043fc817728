//! End-to-end connectivity estimation from multi-environment data, plus
//! intervention-variance recovery, identifiability checking, and
//! mechanism-violation diagnostics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feasibility::{permute_and_scale, FeasibleDiagonalizer};
use crate::jointdiag::{joint_diagonalize, DiagOptions};
use crate::scatter::{build_scatter_set, MultiEnvDataset, ScatterMode, ScatterSet};

#[derive(Debug, Clone)]
pub struct EstimateConfig {
    pub mode: ScatterMode,
    pub diag: DiagOptions,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            mode: ScatterMode::Covariance,
            // Estimation demands settling evidence from the diagonalizer:
            // identically distributed environments produce delta matrices
            // of pure sampling noise, and a stationary loss there must
            // read as non-convergence, not as a graph.
            diag: DiagOptions {
                require_settling: true,
                ..DiagOptions::default()
            },
        }
    }
}

/// Structured warnings carried by an estimate instead of aborting it.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimateWarning {
    /// Fewer than three environments: the model is not identifiable, the
    /// point estimate is reported anyway.
    FewEnvironments { count: usize },
    /// The diagonalizer did not converge; the empty graph is returned.
    NotConverged { iterations: usize },
    /// The normalization step found no valid model; the empty graph is
    /// returned.
    AssumptionsViolated { detail: String },
    /// The diagonalizer broke down numerically; the empty graph is
    /// returned.
    NumericalBreakdown { detail: String },
}

impl std::fmt::Display for EstimateWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::FewEnvironments { count } => write!(
                f,
                "only {count} environments: at least 3 are needed for identifiability"
            ),
            Self::NotConverged { iterations } => write!(
                f,
                "joint diagonalization did not converge after {iterations} iterations; returning the empty graph"
            ),
            Self::AssumptionsViolated { detail } => {
                write!(f, "model assumptions violated: {detail}; returning the empty graph")
            }
            Self::NumericalBreakdown { detail } => {
                write!(f, "numerical breakdown: {detail}; returning the empty graph")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConnectivityEstimate {
    /// Estimated connectivity; entry (i, j) is the direct effect of
    /// variable j on variable i. Zero matrix when `empty`.
    pub b_hat: DMatrix<f64>,
    /// The normalized diagonalizer behind `b_hat`, absent when `empty`.
    pub d_hat: Option<FeasibleDiagonalizer>,
    /// Whether the diagonalizer converged.
    pub converged: bool,
    /// True when no usable estimate was produced and `b_hat` is zero.
    pub empty: bool,
    /// Final off-diagonal loss of the raw diagonalizer. NaN if the
    /// diagonalizer broke down before producing a loss.
    pub final_loss: f64,
    pub warnings: Vec<EstimateWarning>,
}

/// Directed edge `from -> to` with its estimated coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// How to anchor per-environment intervention variances, which are only
/// identified up to a per-variable additive constant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Baseline {
    /// The smallest variance across environments becomes zero.
    MinZero,
    /// The named environment becomes zero (for observational baselines).
    Environment(String),
}

#[derive(Debug, Clone)]
pub struct InterventionProfile {
    /// Leave-one-out intervention-variance differences, environments by
    /// variables.
    pub delta_variances: DMatrix<f64>,
    /// Differences shifted per variable according to the baseline.
    pub absolute_variances: DMatrix<f64>,
    pub baseline: Baseline,
    pub env_labels: Vec<String>,
    pub variable_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct IdentifiabilityReport {
    pub identifiable: bool,
    /// Variable pairs (k, l) for which no environment pair separates the
    /// intervention-variance cross products.
    pub violating_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopViolation {
    pub var_a: usize,
    pub var_b: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    /// Per environment: the estimate's residual transform of the delta,
    /// diagonal zeroed. Off-diagonal mass signals a mechanism change
    /// rather than a pure shift.
    pub residuals: Vec<DMatrix<f64>>,
    pub top_violation: Vec<TopViolation>,
    pub env_labels: Vec<String>,
}

fn empty_estimate(p: usize, converged: bool, final_loss: f64, warning: EstimateWarning) -> ConnectivityEstimate {
    ConnectivityEstimate {
        b_hat: DMatrix::zeros(p, p),
        d_hat: None,
        converged,
        empty: true,
        final_loss,
        warnings: vec![warning],
    }
}

/// Runs the full estimation chain on precomputed leave-one-out deltas:
/// joint diagonalization, then normalization to a unit-diagonal,
/// cycle-feasible transform, then `B_hat = I - D_hat`.
///
/// Non-convergence and normalization failures are reported as warnings on
/// an empty estimate rather than errors.
pub fn estimate_from_deltas(deltas: &[DMatrix<f64>], opts: &DiagOptions) -> Result<ConnectivityEstimate> {
    if deltas.len() < 2 {
        return Err(Error::NeedMultipleEnvironments);
    }
    let p = deltas[0].nrows();
    if p < 2 {
        return Err(Error::ShapeError(format!(
            "need at least 2 variables, got {p}"
        )));
    }
    let mut warnings = Vec::new();
    if deltas.len() < 3 {
        warnings.push(EstimateWarning::FewEnvironments {
            count: deltas.len(),
        });
    }

    let diag = match joint_diagonalize(deltas, opts) {
        Ok(res) => res,
        Err(Error::NumericalBreakdown(detail)) => {
            let mut est = empty_estimate(
                p,
                false,
                f64::NAN,
                EstimateWarning::NumericalBreakdown { detail },
            );
            est.warnings.extend(warnings);
            return Ok(est);
        }
        Err(e) => return Err(e),
    };

    if !diag.converged {
        let mut est = empty_estimate(
            p,
            false,
            diag.final_loss,
            EstimateWarning::NotConverged {
                iterations: diag.iterations,
            },
        );
        est.warnings.extend(warnings);
        return Ok(est);
    }

    match permute_and_scale(&diag.d_tilde) {
        Ok(fd) => {
            let b_hat = DMatrix::identity(p, p) - &fd.d_hat;
            Ok(ConnectivityEstimate {
                b_hat,
                d_hat: Some(fd),
                converged: true,
                empty: false,
                final_loss: diag.final_loss,
                warnings,
            })
        }
        Err(Error::ModelAssumptionsViolated(detail)) => {
            let mut est = empty_estimate(
                p,
                true,
                diag.final_loss,
                EstimateWarning::AssumptionsViolated { detail },
            );
            est.warnings.extend(warnings);
            Ok(est)
        }
        Err(e) => Err(e),
    }
}

/// Estimates the connectivity matrix from raw multi-environment data.
pub fn estimate(dataset: &MultiEnvDataset, config: &EstimateConfig) -> Result<ConnectivityEstimate> {
    let scatter = build_scatter_set(dataset, config.mode)?;
    estimate_from_deltas(&scatter.deltas, &config.diag)
}

/// Off-diagonal entries with magnitude strictly above `t`, sorted by
/// (from, to).
pub fn threshold_edges(b_hat: &DMatrix<f64>, t: f64) -> Result<Vec<Edge>> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::ContractViolation(
            "threshold must be a nonnegative number".into(),
        ));
    }
    let p = b_hat.nrows();
    let mut edges = Vec::new();
    for from in 0..p {
        for to in 0..p {
            if from != to && b_hat[(to, from)].abs() > t {
                edges.push(Edge {
                    from,
                    to,
                    weight: b_hat[(to, from)],
                });
            }
        }
    }
    Ok(edges)
}

fn transform_deltas(b_hat: &DMatrix<f64>, scatter: &ScatterSet) -> Result<Vec<DMatrix<f64>>> {
    let p = scatter.p();
    if b_hat.nrows() != p || b_hat.ncols() != p {
        return Err(Error::ShapeError(format!(
            "estimate is {}x{}, scatter has {p} variables",
            b_hat.nrows(),
            b_hat.ncols()
        )));
    }
    let m = DMatrix::identity(p, p) - b_hat;
    Ok(scatter
        .deltas
        .iter()
        .map(|d| {
            let mut r = &m * d * m.transpose();
            for k in 0..p {
                for l in (k + 1)..p {
                    let avg = 0.5 * (r[(k, l)] + r[(l, k)]);
                    r[(k, l)] = avg;
                    r[(l, k)] = avg;
                }
            }
            r
        })
        .collect())
}

/// Recovers per-environment intervention-variance differences from the
/// diagonal of the estimate's residual transform, then anchors them.
pub fn intervention_variances(
    est: &ConnectivityEstimate,
    scatter: &ScatterSet,
    baseline: &Baseline,
) -> Result<InterventionProfile> {
    if est.empty {
        return Err(Error::EstimateUnavailable(
            "intervention variances need a non-empty estimate".into(),
        ));
    }
    let transformed = transform_deltas(&est.b_hat, scatter)?;
    let j = scatter.n_env();
    let p = scatter.p();
    let mut delta_variances = DMatrix::zeros(j, p);
    for (row, t) in transformed.iter().enumerate() {
        for k in 0..p {
            delta_variances[(row, k)] = t[(k, k)];
        }
    }
    let base_row = match baseline {
        Baseline::MinZero => None,
        Baseline::Environment(label) => Some(
            scatter
                .env_labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| {
                    Error::ContractViolation(format!("unknown baseline environment {label:?}"))
                })?,
        ),
    };
    let mut absolute_variances = delta_variances.clone();
    for k in 0..p {
        let offset = match base_row {
            Some(row) => delta_variances[(row, k)],
            None => (0..j)
                .map(|row| delta_variances[(row, k)])
                .fold(f64::INFINITY, f64::min),
        };
        for row in 0..j {
            absolute_variances[(row, k)] -= offset;
        }
    }
    Ok(InterventionProfile {
        delta_variances,
        absolute_variances,
        baseline: baseline.clone(),
        env_labels: scatter.env_labels.clone(),
        variable_names: scatter.variable_names.clone(),
    })
}

/// Tests the cross-product separation condition on intervention-variance
/// differences. The connectivity matrix is uniquely recoverable exactly
/// when every variable pair is separated by some environment pair.
pub fn check_identifiability(eta: &DMatrix<f64>) -> Result<IdentifiabilityReport> {
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::ContractViolation(
            "eta contains a non-finite value".into(),
        ));
    }
    let j = eta.nrows();
    let p = eta.ncols();
    let mut violating_pairs = Vec::new();
    for k in 0..p {
        for l in (k + 1)..p {
            let mut separated = false;
            'outer: for a in 0..j {
                for b in (a + 1)..j {
                    let lhs = eta[(a, k)] * eta[(b, l)];
                    let rhs = eta[(a, l)] * eta[(b, k)];
                    if (lhs - rhs).abs() > 1e-8 * lhs.abs().max(rhs.abs()).max(1.0) {
                        separated = true;
                        break 'outer;
                    }
                }
            }
            if !separated {
                violating_pairs.push((k, l));
            }
        }
    }
    Ok(IdentifiabilityReport {
        identifiable: violating_pairs.is_empty(),
        violating_pairs,
    })
}

/// Residual off-diagonal mass per environment. Large entries indicate the
/// environment's change was not a pure shift intervention, and point at
/// the variables involved.
pub fn diagnose(est: &ConnectivityEstimate, scatter: &ScatterSet) -> Result<DiagnosticsReport> {
    if est.empty {
        return Err(Error::EstimateUnavailable(
            "diagnostics need a non-empty estimate".into(),
        ));
    }
    let mut residuals = transform_deltas(&est.b_hat, scatter)?;
    let p = scatter.p();
    let mut top_violation = Vec::with_capacity(residuals.len());
    for r in residuals.iter_mut() {
        for k in 0..p {
            r[(k, k)] = 0.0;
        }
        let mut best = TopViolation {
            var_a: 0,
            var_b: if p > 1 { 1 } else { 0 },
            magnitude: 0.0,
        };
        for k in 0..p {
            for l in (k + 1)..p {
                let mag = r[(k, l)].abs();
                if mag > best.magnitude {
                    best = TopViolation {
                        var_a: k,
                        var_b: l,
                        magnitude: mag,
                    };
                }
            }
        }
        top_violation.push(best);
    }
    Ok(DiagnosticsReport {
        residuals,
        top_violation,
        env_labels: scatter.env_labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scatter::Environment;
    use nalgebra::DVector;

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

    fn five_node_b() -> DMatrix<f64> {
        // One 3-cycle (product 0.21) plus a chain edge.
        let mut b = DMatrix::zeros(5, 5);
        b[(1, 0)] = 0.7;
        b[(2, 1)] = 0.6;
        b[(0, 2)] = -0.5;
        b[(4, 3)] = 0.8;
        b
    }

    fn exact_deltas(b: &DMatrix<f64>, etas: &[Vec<f64>]) -> Vec<DMatrix<f64>> {
        let p = b.nrows();
        let a = (DMatrix::identity(p, p) - b).try_inverse().unwrap();
        etas.iter()
            .map(|eta| {
                let diag = DMatrix::from_diagonal(&DVector::from_row_slice(eta));
                &a * diag * a.transpose()
            })
            .collect()
    }

    fn three_etas() -> Vec<Vec<f64>> {
        vec![
            vec![1.8, 0.3, -0.9, 1.2, 0.5],
            vec![-0.4, 1.5, 0.8, -0.7, 1.1],
            vec![0.6, -1.1, 1.4, 0.9, -1.3],
        ]
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    #[test]
    fn population_exact_recovery() {
        let b = five_node_b();
        let deltas = exact_deltas(&b, &three_etas());
        let est = estimate_from_deltas(&deltas, &DiagOptions::default()).unwrap();
        assert!(!est.empty);
        assert!(est.converged);
        assert!(est.warnings.is_empty());
        let err = max_abs(&(&est.b_hat - &b));
        assert!(err < 1e-6, "recovery error {err}");
        for k in 0..5 {
            assert_eq!(est.b_hat[(k, k)], 0.0);
        }
    }

    #[test]
    fn two_environments_warn_but_estimate() {
        let b = five_node_b();
        let mut deltas = exact_deltas(&b, &three_etas());
        deltas.truncate(2);
        let est = estimate_from_deltas(&deltas, &DiagOptions::default()).unwrap();
        assert!(est
            .warnings
            .iter()
            .any(|w| matches!(w, EstimateWarning::FewEnvironments { count: 2 })));
    }

    #[test]
    fn single_environment_is_an_error() {
        let deltas = vec![DMatrix::<f64>::identity(3, 3)];
        assert!(matches!(
            estimate_from_deltas(&deltas, &DiagOptions::default()),
            Err(Error::NeedMultipleEnvironments)
        ));
    }

    #[test]
    fn threshold_edges_examples() {
        let mut b = DMatrix::zeros(3, 3);
        b[(1, 0)] = 0.3;
        b[(2, 0)] = -0.2;
        b[(0, 1)] = 0.26;
        let edges = threshold_edges(&b, 0.25).unwrap();
        assert_eq!(edges.len(), 2);
        assert_eq!((edges[0].from, edges[0].to), (0, 1));
        assert_eq!((edges[1].from, edges[1].to), (1, 0));
        assert!(threshold_edges(&b, f64::INFINITY).unwrap().is_empty());
        let dense = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 0.5 });
        assert_eq!(threshold_edges(&dense, 0.0).unwrap().len(), 12);
        assert!(threshold_edges(&b, -0.1).is_err());
        assert!(threshold_edges(&b, f64::NAN).is_err());
    }

    fn scatter_from_deltas(deltas: Vec<DMatrix<f64>>) -> ScatterSet {
        let p = deltas[0].nrows();
        ScatterSet {
            per_env: deltas.clone(),
            deltas,
            mode: ScatterMode::Covariance,
            env_labels: (0..3).map(|j| format!("e{j}")).collect(),
            variable_names: (1..=p).map(|k| format!("x{k}")).collect(),
        }
    }

    #[test]
    fn intervention_variances_match_planted_etas() {
        let b = five_node_b();
        let etas = three_etas();
        let deltas = exact_deltas(&b, &etas);
        let est = estimate_from_deltas(&deltas, &DiagOptions::default()).unwrap();
        let scatter = scatter_from_deltas(deltas);
        let profile = intervention_variances(&est, &scatter, &Baseline::MinZero).unwrap();
        for (j, eta) in etas.iter().enumerate() {
            for k in 0..5 {
                let err = (profile.delta_variances[(j, k)] - eta[k]).abs();
                assert!(err < 1e-6, "eta mismatch at ({j},{k}): {err}");
            }
        }
        // Anchoring: every column minimum is exactly zero.
        for k in 0..5 {
            let col_min = (0..3)
                .map(|j| profile.absolute_variances[(j, k)])
                .fold(f64::INFINITY, f64::min);
            assert_eq!(col_min, 0.0);
            assert!((0..3).all(|j| profile.absolute_variances[(j, k)] >= 0.0));
        }
    }

    #[test]
    fn intervention_variances_environment_baseline() {
        let b = five_node_b();
        let deltas = exact_deltas(&b, &three_etas());
        let est = estimate_from_deltas(&deltas, &DiagOptions::default()).unwrap();
        let scatter = scatter_from_deltas(deltas);
        let profile =
            intervention_variances(&est, &scatter, &Baseline::Environment("e1".into())).unwrap();
        for k in 0..5 {
            assert_eq!(profile.absolute_variances[(1, k)], 0.0);
        }
        assert!(matches!(
            intervention_variances(&est, &scatter, &Baseline::Environment("nope".into())),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn intervention_variances_zero_deltas_are_zero() {
        let p = 4;
        let est = ConnectivityEstimate {
            b_hat: DMatrix::zeros(p, p),
            d_hat: None,
            converged: true,
            empty: false,
            final_loss: 0.0,
            warnings: vec![],
        };
        let deltas = vec![DMatrix::zeros(p, p); 3];
        let mut scatter = scatter_from_deltas(deltas);
        scatter.variable_names = (1..=p).map(|k| format!("x{k}")).collect();
        let profile = intervention_variances(&est, &scatter, &Baseline::MinZero).unwrap();
        assert_eq!(max_abs(&profile.delta_variances), 0.0);
        assert_eq!(max_abs(&profile.absolute_variances), 0.0);
    }

    #[test]
    fn intervention_variances_rows_sum_to_zero() {
        // Leave-one-out deltas always sum to zero, so the recovered
        // variance differences must as well, per variable.
        let mut rng = Lcg(5);
        let p = 4;
        let envs: Vec<Environment> = (0..5)
            .map(|j| Environment {
                label: format!("e{j}"),
                data: DMatrix::from_fn(60, p, |_, _| rng.next_f64() * 2.0 - 1.0),
            })
            .collect();
        let ds = MultiEnvDataset::new(envs).unwrap();
        let scatter = build_scatter_set(&ds, ScatterMode::Covariance).unwrap();
        let est = ConnectivityEstimate {
            b_hat: DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { 0.1 }),
            d_hat: None,
            converged: true,
            empty: false,
            final_loss: 0.0,
            warnings: vec![],
        };
        let profile = intervention_variances(&est, &scatter, &Baseline::MinZero).unwrap();
        for k in 0..p {
            let col_sum: f64 = (0..5).map(|j| profile.delta_variances[(j, k)]).sum();
            assert!(col_sum.abs() < 1e-8, "column {k} sums to {col_sum}");
        }
    }

    #[test]
    fn empty_estimate_blocks_downstream() {
        let est = ConnectivityEstimate {
            b_hat: DMatrix::zeros(3, 3),
            d_hat: None,
            converged: false,
            empty: true,
            final_loss: f64::NAN,
            warnings: vec![],
        };
        let scatter = scatter_from_deltas(vec![DMatrix::zeros(3, 3); 3]);
        assert!(matches!(
            intervention_variances(&est, &scatter, &Baseline::MinZero),
            Err(Error::EstimateUnavailable(_))
        ));
        assert!(matches!(
            diagnose(&est, &scatter),
            Err(Error::EstimateUnavailable(_))
        ));
    }

    #[test]
    fn identifiability_two_environment_structure_always_fails() {
        let mut rng = Lcg(17);
        for _ in 0..50 {
            let p = 3 + (rng.next_f64() * 4.0) as usize;
            let row: Vec<f64> = (0..p).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
            // Leave-one-out structure with two environments: the second
            // row is exactly the negation of the first.
            let eta = DMatrix::from_fn(2, p, |j, k| if j == 0 { row[k] } else { -row[k] });
            let rep = check_identifiability(&eta).unwrap();
            assert!(!rep.identifiable);
            assert_eq!(rep.violating_pairs.len(), p * (p - 1) / 2);
        }
    }

    #[test]
    fn identifiability_three_environments_generic() {
        let mut rng = Lcg(18);
        for _ in 0..50 {
            let p = 3 + (rng.next_f64() * 4.0) as usize;
            let eta = DMatrix::from_fn(3, p, |_, _| rng.next_f64() * 4.0 - 2.0);
            let rep = check_identifiability(&eta).unwrap();
            assert!(rep.identifiable);
            assert!(rep.violating_pairs.is_empty());
        }
    }

    #[test]
    fn identifiability_proportional_columns_violate() {
        let mut rng = Lcg(19);
        let mut eta = DMatrix::from_fn(3, 4, |_, _| rng.next_f64() * 2.0 - 1.0);
        for j in 0..3 {
            eta[(j, 2)] = 2.0 * eta[(j, 0)];
        }
        let rep = check_identifiability(&eta).unwrap();
        assert!(!rep.identifiable);
        assert!(rep.violating_pairs.contains(&(0, 2)));
    }

    #[test]
    fn diagnose_exact_instance_has_tiny_residuals() {
        let b = five_node_b();
        let deltas = exact_deltas(&b, &three_etas());
        let est = estimate_from_deltas(&deltas, &DiagOptions::default()).unwrap();
        let scatter = scatter_from_deltas(deltas);
        let report = diagnose(&est, &scatter).unwrap();
        for (r, top) in report.residuals.iter().zip(&report.top_violation) {
            assert!(top.magnitude <= 1e-8, "violation {}", top.magnitude);
            // Stored diagonal is exactly zero and the top matches the max.
            for k in 0..5 {
                assert_eq!(r[(k, k)], 0.0);
            }
            assert!((max_abs(r) - top.magnitude).abs() <= f64::EPSILON);
            assert_eq!(r, &r.transpose());
        }
    }

    #[test]
    fn pipeline_is_scale_invariant() {
        let b = five_node_b();
        let deltas = exact_deltas(&b, &three_etas());
        let scaled: Vec<DMatrix<f64>> = deltas.iter().map(|d| d * 4.0).collect();
        let est1 = estimate_from_deltas(&deltas, &DiagOptions::default()).unwrap();
        let est2 = estimate_from_deltas(&scaled, &DiagOptions::default()).unwrap();
        assert!(max_abs(&(&est1.b_hat - &est2.b_hat)) < 1e-12);
        // Variance differences scale with the data scale squared.
        let s1 = scatter_from_deltas(deltas);
        let s2 = scatter_from_deltas(scaled);
        let p1 = intervention_variances(&est1, &s1, &Baseline::MinZero).unwrap();
        let p2 = intervention_variances(&est2, &s2, &Baseline::MinZero).unwrap();
        let diff = &p2.delta_variances - &p1.delta_variances * 4.0;
        assert!(max_abs(&diff) < 1e-9);
    }

    #[test]
    fn projected_solution_still_diagonalizes() {
        use crate::jointdiag::offdiag_loss;
        let b = five_node_b();
        let deltas = exact_deltas(&b, &three_etas());
        let est = estimate_from_deltas(&deltas, &DiagOptions::default()).unwrap();
        let m = DMatrix::identity(5, 5) - &est.b_hat;
        let projected = offdiag_loss(&deltas, &m).unwrap();
        let energy: f64 = deltas.iter().map(|d| d.norm_squared()).sum();
        assert!(
            projected <= 100.0 * est.final_loss + 1e-18 * energy,
            "projected {projected} vs raw {}",
            est.final_loss
        );
    }
}
